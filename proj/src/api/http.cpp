#include <httplib.h>

#include "nnprobe/api.hpp"

namespace nnprobe::api {

bool serve(ApiService& service, const std::string& host, int port, const std::atomic<bool>* stop,
           std::function<void(int)> on_listening) {
  httplib::Server server;
  const auto dispatch = [&service](const httplib::Request& req, httplib::Response& res) {
    Request r;
    r.method = req.method;
    r.path = req.path;
    for (const auto& [k, v] : req.params) r.query.emplace(k, v);
    r.body = req.body;
    const auto out = service.handle(r);
    res.status = out.status;
    for (const auto& [k, v] : out.headers)
      if (k != "Content-Type") res.set_header(k, v);
    res.set_content(out.body, "application/json");
  };
  server.Get(".*", dispatch);
  server.Post(".*", dispatch);
  server.Put(".*", dispatch);
  server.Delete(".*", dispatch);

  const int bound = port == 0 ? server.bind_to_any_port(host) : (server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) return false;
  std::atomic<bool> done{false};
  std::thread stopper;
  if (stop)
    stopper = std::thread([&server, &done, stop] {
      while (!stop->load() && !done.load()) std::this_thread::sleep_for(std::chrono::milliseconds(100));
      server.stop();
    });
  if (on_listening) on_listening(bound);
  const bool ok = server.listen_after_bind();
  done = true;
  if (stopper.joinable()) stopper.join();
  return ok;
}

}  // namespace nnprobe::api

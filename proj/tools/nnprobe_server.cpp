#include <csignal>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "nnprobe/api.hpp"
#include "nnprobe/fixture.hpp"

namespace {
std::atomic<bool> g_stop{false};
void on_signal(int) { g_stop = true; }
}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Serve an experiment log directory over HTTP"};
  std::string log_dir;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t cache_mb = 256;
  bool watch = true;
  std::string fixture;
  std::uint64_t seed = 7;
  int poll_ms = 1000;
  app.add_option("--log-dir", log_dir, "Experiment log directory")->required();
  app.add_option("--host", host, "Listen address");
  app.add_option("--port", port, "Listen port (0 picks a free port)")->check(CLI::Range(0, 65535));
  app.add_option("--cache-mb", cache_mb, "Response cache budget in MB");
  app.add_flag("--watch,!--no-watch", watch, "Reload the catalog when the directory changes");
  app.add_option("--fixture", fixture, "Generate a fixture into --log-dir first (uc1, uc2, uc3 or kind:key=val,...)");
  app.add_option("--seed", seed, "Fixture seed");
  app.add_option("--poll-ms", poll_ms, "Watch polling interval")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  try {
    nnprobe::store::CatalogPtr catalog;
    if (!fixture.empty()) {
      if (std::filesystem::exists(std::filesystem::path(log_dir) / nnprobe::store::kDatabaseFile)) {
        std::cerr << "refusing to generate a fixture into a non-empty log dir: " << log_dir << "\n";
        return 2;
      }
      catalog = nnprobe::store::generate_fixture(nnprobe::store::parse_fixture_spec(fixture), seed, log_dir);
    } else {
      catalog = nnprobe::store::load_catalog(log_dir);
    }
    nnprobe::api::ApiService service(log_dir, catalog, {cache_mb << 20});
    nnprobe::api::CatalogWatcher watcher(log_dir, service.catalog(),
                                         [](const std::string& msg) { std::cerr << msg << "\n"; });
    if (watch) watcher.start(std::chrono::milliseconds(poll_ms));

    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    const bool ok = nnprobe::api::serve(service, host, port, &g_stop, [&](int bound) {
      std::cout << "listening on http://" << host << ":" << bound << " (" << catalog->models.size() << " models)"
                << std::endl;
    });
    watcher.stop();
    if (!ok && !g_stop) {
      std::cerr << "could not listen on " << host << ":" << port << "\n";
      return 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

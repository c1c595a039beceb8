#include <algorithm>
#include <vector>

#include "nnprobe/api.hpp"
#include "nnprobe/error.hpp"

namespace nnprobe::api {

namespace fs = std::filesystem;

std::uint64_t CatalogWatcher::fingerprint(const fs::path& root) {
  std::vector<std::string> lines;
  std::error_code ec;
  if (!fs::exists(root, ec)) return 0;
  for (fs::recursive_directory_iterator it(root, fs::directory_options::skip_permission_denied, ec), end;
       !ec && it != end; it.increment(ec)) {
    const auto rel = fs::relative(it->path(), root, ec).generic_string();
    if (rel == components::NoteStore::kFile || rel == "sessions") {
      if (it->is_directory(ec)) it.disable_recursion_pending();
      continue;
    }
    if (!it->is_regular_file(ec)) continue;
    const auto size = it->file_size(ec);
    const auto mtime = it->last_write_time(ec).time_since_epoch().count();
    lines.push_back(rel + '\t' + std::to_string(size) + '\t' + std::to_string(mtime));
  }
  std::sort(lines.begin(), lines.end());
  std::string all;
  for (const auto& l : lines) all += l + '\n';
  return fnv1a(all);
}

CatalogWatcher::CatalogWatcher(fs::path root, CatalogHolder& holder, Logger log)
    : root_(std::move(root)), holder_(holder), log_(std::move(log)), seen_(fingerprint(root_)) {}

CatalogWatcher::~CatalogWatcher() { stop(); }

bool CatalogWatcher::poll_once() {
  std::lock_guard lock(mu_);
  const auto fp = fingerprint(root_);
  if (fp == seen_) return false;
  seen_ = fp;
  const auto current = holder_.get();
  try {
    holder_.publish(store::load_catalog(root_, current ? current->version + 1 : 1));
    last_error_.reset();
    if (log_) log_("reloaded catalog, version " + std::to_string(holder_.get()->version));
    return true;
  } catch (const std::exception& e) {
    last_error_ = e.what();
    if (log_) log_(std::string("reload failed, keeping version ") + std::to_string(current ? current->version : 0) +
                   ": " + e.what());
    return false;
  }
}

void CatalogWatcher::start(std::chrono::milliseconds interval) {
  if (running_.exchange(true)) return;
  thread_ = std::thread([this, interval] {
    while (running_) {
      const auto until = std::chrono::steady_clock::now() + interval;
      while (running_ && std::chrono::steady_clock::now() < until)
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
      if (running_) poll_once();
    }
  });
}

void CatalogWatcher::stop() {
  running_ = false;
  if (thread_.joinable()) thread_.join();
}

std::optional<std::string> CatalogWatcher::last_error() const {
  std::lock_guard lock(mu_);
  return last_error_;
}

}  // namespace nnprobe::api

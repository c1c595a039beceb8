#pragma once

// HTTP-facing service. Routing and caching are transport-agnostic
// (ApiService::handle); serve() binds them to cpp-httplib.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>

#include <json.hpp>

#include "nnprobe/components.hpp"
#include "nnprobe/store.hpp"

namespace nnprobe::api {

struct Request {
  std::string method = "GET";
  std::string path;
  std::map<std::string, std::string> query;
  std::string body;
};

struct Response {
  int status = 200;
  std::map<std::string, std::string> headers;
  std::string body;

  nlohmann::json json() const { return nlohmann::json::parse(body); }
};

std::uint64_t fnv1a(std::string_view bytes);

struct CacheKey {
  std::string material;  // version, route and canonical body
  std::uint64_t hash = 0;

  std::string hex() const;
};

/// Keys on the canonical form of the body (sorted fields, compact), so
/// semantically equal requests share an entry.
CacheKey make_cache_key(std::uint64_t version, std::string_view route, const nlohmann::json& body);

/// In-process LRU keyed by CacheKey::material with a byte budget.
class ResponseCache {
 public:
  struct Entry {
    std::shared_ptr<const std::string> body;
    std::chrono::system_clock::time_point created;
  };
  struct Stats {
    std::uint64_t hits = 0, misses = 0, evictions = 0;
    std::size_t bytes = 0, entries = 0;
  };

  explicit ResponseCache(std::size_t budget_bytes);
  std::optional<Entry> get(const CacheKey& key);
  /// Entries larger than the whole budget are not stored.
  void put(const CacheKey& key, std::string body);
  Stats stats() const;
  std::size_t budget() const noexcept { return budget_; }

 private:
  struct Node {
    std::string key;
    Entry entry;
  };
  using List = std::list<Node>;
  std::size_t budget_;
  mutable std::mutex mu_;
  List lru_;  // front = most recent
  std::unordered_map<std::string, List::iterator> map_;
  Stats stats_;
};

/// Holds the published catalog; readers take a snapshot per request.
class CatalogHolder {
 public:
  explicit CatalogHolder(store::CatalogPtr initial) : current_(std::move(initial)) {}
  store::CatalogPtr get() const {
    std::lock_guard lock(mu_);
    return current_;
  }
  void publish(store::CatalogPtr next) {
    std::lock_guard lock(mu_);
    current_ = std::move(next);
  }

 private:
  mutable std::mutex mu_;
  store::CatalogPtr current_;
};

/// Polls the log directory fingerprint (names, sizes, mtimes; notes and
/// sessions excluded) and republishes on change. A failed reload keeps the
/// previous catalog and version.
class CatalogWatcher {
 public:
  using Logger = std::function<void(const std::string&)>;
  CatalogWatcher(std::filesystem::path root, CatalogHolder& holder, Logger log = {});
  ~CatalogWatcher();

  /// One poll; returns true when a new catalog was published.
  bool poll_once();
  void start(std::chrono::milliseconds interval = std::chrono::milliseconds(1000));
  void stop();
  std::optional<std::string> last_error() const;

  static std::uint64_t fingerprint(const std::filesystem::path& root);

 private:
  std::filesystem::path root_;
  CatalogHolder& holder_;
  Logger log_;
  std::uint64_t seen_;
  std::optional<std::string> last_error_;
  mutable std::mutex mu_;
  std::atomic<bool> running_{false};
  std::thread thread_;
};

struct ServiceOptions {
  std::size_t cache_bytes = std::size_t{256} << 20;
};

class ApiService {
 public:
  ApiService(std::filesystem::path root, store::CatalogPtr initial, ServiceOptions options = {});

  Response handle(const Request& request);

  CatalogHolder& catalog() noexcept { return catalog_; }
  ResponseCache& cache() noexcept { return cache_; }
  const std::filesystem::path& root() const noexcept { return root_; }

  /// Machine-readable route listing served at /openapi.
  static nlohmann::json route_listing();

 private:
  std::filesystem::path root_;
  CatalogHolder catalog_;
  ResponseCache cache_;
  components::NoteStore notes_;
  components::SessionStore sessions_;
  std::atomic<std::uint64_t> next_widget_{1};
};

/// Blocks serving `service` on host:port until `stop` becomes true (checked
/// every 100 ms) or the listener fails. Returns false when binding failed.
bool serve(ApiService& service, const std::string& host, int port, const std::atomic<bool>* stop = nullptr,
           std::function<void(int)> on_listening = {});

}  // namespace nnprobe::api

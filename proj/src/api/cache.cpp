#include <cstdio>

#include "nnprobe/api.hpp"

namespace nnprobe::api {

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string CacheKey::hex() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

CacheKey make_cache_key(std::uint64_t version, std::string_view route, const nlohmann::json& body) {
  // nlohmann::json objects are std::map-backed, so dump() is already sorted.
  CacheKey key;
  key.material = std::to_string(version) + '\n' + std::string(route) + '\n' + body.dump();
  key.hash = fnv1a(key.material);
  return key;
}

ResponseCache::ResponseCache(std::size_t budget_bytes) : budget_(budget_bytes) {}

std::optional<ResponseCache::Entry> ResponseCache::get(const CacheKey& key) {
  std::lock_guard lock(mu_);
  auto it = map_.find(key.material);
  if (it == map_.end()) {
    ++stats_.misses;
    return std::nullopt;
  }
  lru_.splice(lru_.begin(), lru_, it->second);
  ++stats_.hits;
  return it->second->entry;
}

void ResponseCache::put(const CacheKey& key, std::string body) {
  const std::size_t cost = key.material.size() + body.size();
  if (cost > budget_) return;
  std::lock_guard lock(mu_);
  if (auto it = map_.find(key.material); it != map_.end()) {
    stats_.bytes -= it->first.size() + it->second->entry.body->size();
    lru_.erase(it->second);
    map_.erase(it);
  }
  while (stats_.bytes + cost > budget_ && !lru_.empty()) {
    auto& victim = lru_.back();
    stats_.bytes -= victim.key.size() + victim.entry.body->size();
    map_.erase(victim.key);
    lru_.pop_back();
    ++stats_.evictions;
  }
  lru_.push_front({key.material, {std::make_shared<const std::string>(std::move(body)), std::chrono::system_clock::now()}});
  map_.emplace(key.material, lru_.begin());
  stats_.bytes += cost;
  stats_.entries = map_.size();
}

ResponseCache::Stats ResponseCache::stats() const {
  std::lock_guard lock(mu_);
  auto s = stats_;
  s.entries = map_.size();
  return s;
}

}  // namespace nnprobe::api

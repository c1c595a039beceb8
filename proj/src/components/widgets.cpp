#include <algorithm>
#include <chrono>
#include <cctype>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <random>
#include <regex>
#include <set>

#include "nnprobe/components.hpp"

namespace nnprobe::components {

namespace {

bool class_sensitive(const BoundQuery& q) {
  using Kind = store::paths::Parsed::Kind;
  if (q.kind == QueryKind::neurons_by_class) return true;
  if (q.kind != QueryKind::tensor) return false;
  try {
    const auto k = store::paths::parse(q.path).kind;
    return k != Kind::kernel && k != Kind::bias;
  } catch (const FormatError&) {
    return false;
  }
}

std::pair<double, double> span_union(const std::pair<double, double>& a, const std::pair<double, double>& b) {
  return {std::min(a.first, b.first), std::max(a.second, b.second)};
}

nlohmann::json domain_json(const std::pair<double, double>& d) { return nlohmann::json::array({d.first, d.second}); }

nlohmann::json widget_data_json(const WidgetData& d) {
  nlohmann::json series = nlohmann::json::array();
  for (const auto& s : d.series) series.push_back({{"label", s.label}, {"x", s.x}, {"y", s.y}});
  return {{"widget_id", d.widget_id},
          {"label", d.label},
          {"representation", d.representation},
          {"x_semantics", d.x_semantics},
          {"y_semantics", d.y_semantics},
          {"x_domain", domain_json(d.x_domain)},
          {"y_domain", domain_json(d.y_domain)},
          {"series", series}};
}

const std::regex kSafeId("[A-Za-z0-9_][A-Za-z0-9_.-]*");

const std::vector<std::pair<GroupMode, std::string_view>> kGroupModes{
    {GroupMode::side_by_side, "side_by_side"}, {GroupMode::common_scale, "common_scale"}, {GroupMode::merged, "merged"}};

}  // namespace

std::string_view to_string(GroupMode mode) {
  for (const auto& [m, n] : kGroupModes)
    if (m == mode) return n;
  return "?";
}

std::optional<GroupMode> parse_group_mode(std::string_view name) {
  for (const auto& [m, n] : kGroupModes)
    if (n == name) return m;
  return std::nullopt;
}

RegroupResult regroup(const WidgetGroup& group, GroupMode mode, const std::vector<WidgetData>& members) {
  std::set<std::string> expected(group.members.begin(), group.members.end()), given;
  for (const auto& m : members) given.insert(m.widget_id);
  if (expected != given) throw InvalidArgument("widget data does not match the group members of " + group.id);

  RegroupResult result{group, std::nullopt, std::nullopt, std::nullopt};
  result.group.mode = mode;
  if (mode == GroupMode::side_by_side || members.empty()) return result;

  for (std::size_t i = 0; i < members.size(); ++i)
    for (std::size_t j = i + 1; j < members.size(); ++j) {
      const auto& a = members[i];
      const auto& b = members[j];
      if (a.representation != b.representation || a.x_semantics != b.x_semantics || a.y_semantics != b.y_semantics)
        throw InvalidArgument("incompatible widgets: " + a.widget_id + " (" + a.representation + ") and " +
                              b.widget_id + " (" + b.representation + ")");
    }

  auto x = members.front().x_domain, y = members.front().y_domain;
  for (const auto& m : members) {
    x = span_union(x, m.x_domain);
    y = span_union(y, m.y_domain);
  }
  if (mode == GroupMode::common_scale) {
    result.x_domain = x;
    result.y_domain = y;
    return result;
  }
  WidgetData merged;
  merged.widget_id = group.id;
  merged.representation = members.front().representation;
  merged.x_semantics = members.front().x_semantics;
  merged.y_semantics = members.front().y_semantics;
  merged.x_domain = x;
  merged.y_domain = y;
  for (const auto& m : members) {
    if (!merged.label.empty()) merged.label += " | ";
    merged.label += m.label;
    for (const auto& s : m.series) {
      Series copy = s;
      copy.label = s.label.empty() || m.series.size() == 1 ? m.label : m.label + ": " + s.label;
      merged.series.push_back(std::move(copy));
    }
  }
  result.merged = std::move(merged);
  return result;
}

nlohmann::json to_json(const RegroupResult& r) {
  nlohmann::json j{{"group", {{"id", r.group.id}, {"members", r.group.members}, {"mode", to_string(r.group.mode)}}}};
  if (r.x_domain) j["x_domain"] = domain_json(*r.x_domain);
  if (r.y_domain) j["y_domain"] = domain_json(*r.y_domain);
  if (r.merged) j["merged"] = widget_data_json(*r.merged);
  return j;
}

WidgetData parse_widget_data(const nlohmann::json& doc) {
  WidgetData d;
  try {
    d.widget_id = doc.at("widget_id").get<std::string>();
    d.label = doc.value("label", d.widget_id);
    d.representation = doc.at("representation").get<std::string>();
    d.x_semantics = doc.value("x_semantics", std::string());
    d.y_semantics = doc.value("y_semantics", std::string());
    if (doc.contains("x_domain")) d.x_domain = {doc["x_domain"].at(0).get<double>(), doc["x_domain"].at(1).get<double>()};
    if (doc.contains("y_domain")) d.y_domain = {doc["y_domain"].at(0).get<double>(), doc["y_domain"].at(1).get<double>()};
    for (const auto& s : doc.value("series", nlohmann::json::array()))
      d.series.push_back({s.value("label", std::string()), s.value("x", std::vector<double>{}),
                          s.value("y", std::vector<double>{})});
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("invalid parameter: ") + e.what());
  }
  return d;
}

ClassSelectionResult apply_class_selection(const std::vector<std::int64_t>& selection, std::size_t num_classes,
                                           const std::vector<WidgetInstance>& widgets,
                                           const ToolRegistry& registry) {
  if (selection.empty()) throw InvalidArgument("empty class selection");
  std::set<std::int64_t> unique;
  for (auto c : selection) {
    if (c < 0 || static_cast<std::size_t>(c) >= num_classes)
      throw InvalidArgument("unknown class id: " + std::to_string(c));
    unique.insert(c);
  }
  const std::vector<std::int64_t> classes(unique.begin(), unique.end());

  ClassSelectionResult result;
  for (const auto& w : widgets) {
    const auto* tool = registry.find(w.tool);
    if (!tool) throw InvalidArgument("unknown tool: " + w.tool);
    if (!tool->class_dependent) {
      result.unaffected.push_back(w.id);
      continue;
    }
    if (!tool->class_recomputable) {
      result.warned.push_back(w.id);
      continue;
    }
    auto copy = w;
    bool any = false;
    for (auto& q : copy.queries)
      if (class_sensitive(q)) {
        q.classes = classes;
        any = true;
      }
    if (any)
      result.requery.push_back(std::move(copy));
    else
      result.unaffected.push_back(w.id);
  }
  return result;
}

std::uint64_t class_selection_count(std::size_t num_classes) {
  if (num_classes >= 64) throw InvalidArgument("too many classes to count selections");
  return (std::uint64_t{1} << num_classes) - 1;
}

nlohmann::json to_json(const Session& s) {
  nlohmann::json widgets = nlohmann::json::object();
  for (auto level : {Level::multi_model, Level::single_model, Level::layer_unit, Level::weight_neuron})
    widgets[std::string(to_string(level))] = nlohmann::json::array();
  nlohmann::json order = nlohmann::json::array();
  for (const auto& w : s.widgets) {
    widgets[std::string(to_string(w.level))].push_back(to_json(w));
    order.push_back(w.id);
  }
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : s.groups) groups.push_back({{"id", g.id}, {"members", g.members}, {"mode", to_string(g.mode)}});
  return {{"id", s.id}, {"widgets", widgets}, {"order", order}, {"groups", groups}};
}

Session parse_session(const nlohmann::json& doc) {
  if (!doc.is_object()) throw InvalidArgument("invalid parameter: session must be an object");
  Session s;
  try {
    s.id = doc.at("id").get<std::string>();
    std::map<std::string, WidgetInstance> by_id;
    std::vector<std::string> seen;
    if (doc.contains("widgets")) {
      const auto& widgets = doc["widgets"];
      if (!widgets.is_object()) throw InvalidArgument("invalid parameter: widgets must be grouped by level");
      for (const auto& [level, list] : widgets.items()) {
        for (const auto& wj : list) {
          auto w = parse_widget(wj);
          if (to_string(w.level) != level)
            throw InvalidArgument("invalid parameter: widget " + w.id + " listed under " + level + " but belongs to " +
                                  std::string(to_string(w.level)));
          if (by_id.count(w.id)) throw InvalidArgument("invalid parameter: duplicate widget id " + w.id);
          seen.push_back(w.id);
          by_id.emplace(w.id, std::move(w));
        }
      }
    }
    std::vector<std::string> order = doc.value("order", std::vector<std::string>{});
    for (const auto& id : seen)
      if (std::find(order.begin(), order.end(), id) == order.end()) order.push_back(id);
    for (const auto& id : order) {
      auto it = by_id.find(id);
      if (it == by_id.end()) throw InvalidArgument("invalid parameter: order names unknown widget " + id);
      s.widgets.push_back(std::move(it->second));
      by_id.erase(it);
    }
    for (const auto& gj : doc.value("groups", nlohmann::json::array())) {
      WidgetGroup g;
      g.id = gj.at("id").get<std::string>();
      g.members = gj.at("members").get<std::vector<std::string>>();
      const auto mode = parse_group_mode(gj.value("mode", std::string("side_by_side")));
      if (!mode) throw InvalidArgument("invalid parameter: unknown group mode");
      g.mode = *mode;
      for (const auto& m : g.members)
        if (std::none_of(s.widgets.begin(), s.widgets.end(), [&](const auto& w) { return w.id == m; }))
          throw InvalidArgument("invalid parameter: group " + g.id + " names unknown widget " + m);
      s.groups.push_back(std::move(g));
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("invalid parameter: ") + e.what());
  }
  return s;
}

SessionStore::SessionStore(std::filesystem::path root) : dir_(std::move(root) / "sessions") {}

std::optional<Session> SessionStore::load(const std::string& id) const {
  if (!std::regex_match(id, kSafeId)) throw InvalidArgument("bad session id: " + id);
  std::lock_guard lock(mu_);
  const auto file = dir_ / (id + ".json");
  std::ifstream in(file);
  if (!in) return std::nullopt;
  try {
    return parse_session(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed session " + id + ": " + e.what());
  }
}

void SessionStore::save(const Session& session) {
  if (!std::regex_match(session.id, kSafeId)) throw InvalidArgument("bad session id: " + session.id);
  std::lock_guard lock(mu_);
  std::filesystem::create_directories(dir_);
  store::write_document(dir_ / (session.id + ".json"), to_json(session));
}

NoteStore::NoteStore(std::filesystem::path root) : file_(std::move(root) / kFile) {}

std::vector<Note> NoteStore::read_locked() const {
  std::vector<Note> out;
  std::ifstream in(file_);
  if (!in) return out;
  try {
    const auto doc = nlohmann::json::parse(in);
    for (const auto& n : doc.at("notes"))
      out.push_back({n.at("id").get<std::string>(), n.at("uoa").get<std::string>(), n.at("text").get<std::string>(),
                     n.at("created_at").get<std::string>()});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed notes database: ") + e.what());
  }
  return out;
}

std::vector<Note> NoteStore::list(const std::optional<std::string>& uoa) const {
  std::lock_guard lock(mu_);
  auto notes = read_locked();
  if (uoa) notes.erase(std::remove_if(notes.begin(), notes.end(), [&](const Note& n) { return n.uoa != *uoa; }),
                       notes.end());
  return notes;
}

Note NoteStore::add(const std::string& uoa, const std::string& text) {
  const auto path = UoaPath::parse(uoa);
  if (text.empty()) throw InvalidArgument("empty note");
  std::lock_guard lock(mu_);
  auto notes = read_locked();
  Note note{"note-" + std::to_string(notes.size() + 1), path.str(), text, now_iso8601()};
  notes.push_back(note);
  nlohmann::json doc{{"notes", nlohmann::json::array()}};
  for (const auto& n : notes) doc["notes"].push_back(to_json(n));
  store::write_document(file_, doc);
  return note;
}

nlohmann::json to_json(const Note& n) {
  return {{"id", n.id}, {"uoa", n.uoa}, {"text", n.text}, {"created_at", n.created_at}};
}

std::string now_iso8601() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

store::ModelHeader make_branch_header(const store::ExperimentCatalog& catalog, const std::string& parent,
                                      const std::string& name) {
  if (!catalog.find(parent)) throw NotFoundError("unknown model", parent);
  if (name.empty()) throw InvalidArgument("branch name must not be empty");
  std::string slug;
  for (char c : name) slug += (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-') ? c : '_';
  static std::mt19937_64 gen{std::random_device{}()};
  static std::mutex gen_mu;
  store::ModelHeader h;
  h.name = name;
  h.parents = {parent};
  h.created_at = now_iso8601();
  do {
    std::uint64_t r;
    {
      std::lock_guard lock(gen_mu);
      r = gen();
    }
    char hex[9];
    std::snprintf(hex, sizeof hex, "%08x", static_cast<unsigned>(r & 0xffffffffu));
    h.id = slug + "-" + hex;
  } while (catalog.find(h.id));
  const auto violations = store::validate_header(h, catalog);
  if (!violations.empty()) throw InvalidArgument("invalid branch header: " + violations.front());
  return h;
}

}  // namespace nnprobe::components

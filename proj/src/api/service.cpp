#include <algorithm>
#include <regex>
#include <set>

#include "nnprobe/api.hpp"
#include "nnprobe/backbone.hpp"
#include "nnprobe/interest.hpp"

namespace nnprobe::api {

namespace {

using json = nlohmann::json;

struct HttpError {
  int status;
  json body;
};

struct Services {
  components::NoteStore& notes;
  components::SessionStore& sessions;
  std::atomic<std::uint64_t>& next_widget;
};

struct Ctx {
  const store::ExperimentCatalog& catalog;
  std::vector<std::string> params;
  const Request& request;
  json body;
  Services& services;
};

struct Out {
  int status = 200;
  json body;
};

using Handler = Out (*)(Ctx&);

struct Route {
  const char* method;
  const char* pattern;  // documentation form, e.g. /models/{id}/info
  bool cacheable;
  const char* summary;
  Handler fn;
  std::regex re;
};

void allow_fields(const json& body, std::initializer_list<const char*> allowed) {
  if (!body.is_object()) throw InvalidArgument("request body must be a JSON object");
  for (const auto& [k, _] : body.items())
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; }))
      throw InvalidArgument("unknown field: " + k);
}

const json& require(const json& body, const char* field) {
  if (!body.contains(field) || body[field].is_null()) throw InvalidArgument(std::string("missing field: ") + field);
  return body[field];
}

template <typename T>
T get_as(const json& body, const char* field) {
  try {
    return require(body, field).get<T>();
  } catch (const json::exception&) {
    throw InvalidArgument(std::string("invalid field: ") + field);
  }
}

std::optional<std::vector<std::int64_t>> optional_classes(const json& body, const char* field = "classes") {
  if (!body.contains(field) || body[field].is_null()) return std::nullopt;
  return get_as<std::vector<std::int64_t>>(body, field);
}

const store::LoadedModel& model_of(Ctx& c) {
  const auto* m = c.catalog.find(c.params.at(0));
  if (!m) throw NotFoundError("unknown model", c.params.at(0));
  return *m;
}

const store::CheckpointBundle& checkpoint_of(const store::LoadedModel& m, const std::string& selector) {
  if (selector == "latest") {
    if (!m.latest()) throw NotFoundError("model has no checkpoints", m.id());
    return *m.latest();
  }
  std::int64_t epoch = 0;
  try {
    std::size_t used = 0;
    epoch = std::stoll(selector, &used);
    if (used != selector.size()) throw std::invalid_argument(selector);
  } catch (const std::logic_error&) {
    throw InvalidArgument("bad checkpoint selector: " + selector);
  }
  const auto* c = m.checkpoint(epoch);
  if (!c) throw NotFoundError("unknown checkpoint of model " + m.id(), selector);
  return *c;
}

std::string query_param(const Ctx& c, const std::string& key) {
  auto it = c.request.query.find(key);
  if (it == c.request.query.end() || it->second.empty()) throw InvalidArgument("missing query parameter: " + key);
  return it->second;
}

// Catalog routes.

Out get_models(Ctx& c) {
  json ids = json::array();
  for (const auto& m : c.catalog.models) ids.push_back(m.id());
  return {200, ids};
}

Out get_info(Ctx& c) { return {200, json(model_of(c).record)}; }
Out get_graph(Ctx& c) { return {200, json(model_of(c).graph)}; }

Out get_metrics(Ctx& c) {
  const auto& m = model_of(c);
  components::BoundQuery q;
  q.kind = components::QueryKind::metrics;
  q.model = m.id();
  auto out = components::execute_query(c.catalog, q);
  out.erase("kind");
  return {200, out};
}

Out get_checkpoints(Ctx& c) {
  const auto& m = model_of(c);
  json list = json::array();
  for (const auto& b : m.checkpoints) {
    json tensors = json::object();
    for (const auto& [path, ref] : b.tensors) tensors[path] = {{"dtype", to_string(ref.dtype)}, {"shape", ref.shape}};
    list.push_back({{"epoch", b.epoch}, {"tensors", tensors}});
  }
  return {200, {{"model", m.id()}, {"checkpoints", list}}};
}

Out get_tree(Ctx& c) { return {200, backbone::to_json(backbone::build_model_tree(c.catalog))}; }

Out get_search(Ctx& c) {
  return {200, backbone::to_json(backbone::propagate_badges(c.catalog, query_param(c, "kind")))};
}

Out get_structures(Ctx& c) {
  const auto& m = model_of(c);
  auto j = backbone::to_json(backbone::detect_structures(m.graph));
  j["model"] = m.id();
  return {200, j};
}

// Checkpoint routes.

Out post_query(Ctx& c) {
  allow_fields(c.body, {"path", "transform", "classes"});
  const auto& m = model_of(c);
  transform::TransformSpec spec;
  if (c.body.contains("transform") && !c.body["transform"].is_null()) spec = transform::parse_transform(c.body["transform"]);
  return {200, components::run_tensor_query(c.catalog, m.id(), c.params.at(1), get_as<std::string>(c.body, "path"), spec,
                                            optional_classes(c.body))};
}

Out post_neurons(Ctx& c) {
  allow_fields(c.body, {"layer", "classes", "k"});
  const auto& m = model_of(c);
  const auto& b = checkpoint_of(m, c.params.at(1));
  auto classes = optional_classes(c.body);
  if (!classes) {
    classes.emplace();
    for (std::size_t i = 0; i < c.catalog.class_labels.size(); ++i) classes->push_back(static_cast<std::int64_t>(i));
  }
  const auto k = c.body.contains("k") ? get_as<std::int64_t>(c.body, "k") : 10;
  if (k < 1) throw InvalidArgument("k must be >= 1");
  return {200, backbone::to_json(backbone::build_neuron_weight_view(c.catalog, m.id(), get_as<std::string>(c.body, "layer"),
                                                                    b.epoch, *classes, static_cast<std::size_t>(k)))};
}

Out post_neurons_by_class(Ctx& c) {
  allow_fields(c.body, {"layer", "sort_by_class"});
  const auto& m = model_of(c);
  const auto& b = checkpoint_of(m, c.params.at(1));
  std::optional<std::int64_t> sort_by;
  if (c.body.contains("sort_by_class") && !c.body["sort_by_class"].is_null())
    sort_by = get_as<std::int64_t>(c.body, "sort_by_class");
  const auto rows =
      backbone::neurons_by_class_matrix(c.catalog, m.id(), get_as<std::string>(c.body, "layer"), b.epoch, sort_by);
  return {200, {{"model", m.id()}, {"epoch", b.epoch}, {"class_labels", c.catalog.class_labels}, {"rows", backbone::to_json(rows)}}};
}

Out post_interestingness(Ctx& c) {
  allow_fields(c.body, {"measure", "checkpoint", "scope", "variable_type"});
  interest::ScoreOptions o;
  o.measure = interest::parse_measure(require(c.body, "measure"));
  if (c.body.contains("checkpoint") && !c.body["checkpoint"].is_null()) {
    const auto& cp = c.body["checkpoint"];
    if (cp.is_number_integer())
      o.epoch = cp.get<std::int64_t>();
    else if (!(cp.is_string() && cp.get<std::string>() == "latest"))
      throw InvalidArgument("checkpoint must be \"latest\" or an epoch number");
  }
  if (c.body.contains("scope") && !c.body["scope"].is_null())
    for (const auto& s : get_as<std::vector<std::string>>(c.body, "scope")) o.scope.push_back(UoaPath::parse(s));
  if (c.body.contains("variable_type") && !c.body["variable_type"].is_null()) {
    const auto name = get_as<std::string>(c.body, "variable_type");
    o.variable_type = interest::parse_variable_type(name);
    if (!o.variable_type) throw InvalidArgument("unknown variable_type: " + name);
  }
  return {200, interest::to_json(interest::score_and_propagate(c.catalog, o))};
}

Out post_branch(Ctx& c) {
  allow_fields(c.body, {"name"});
  const auto& m = model_of(c);
  return {200, json(components::make_branch_header(c.catalog, m.id(), get_as<std::string>(c.body, "name")))};
}

Out post_validate_header(Ctx& c) {
  allow_fields(c.body, {"header"});
  store::ModelHeader h;
  try {
    h = require(c.body, "header").get<store::ModelHeader>();
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed header: ") + e.what());
  }
  const auto violations = store::validate_header(h, c.catalog);
  return {200, {{"valid", violations.empty()}, {"violations", violations}}};
}

// Debugging components.

json tool_json(const components::ToolDescriptor& t) {
  json kinds = json::array(), levels = json::array();
  for (auto k : t.applicable_uoa_kinds) kinds.push_back(to_string(k));
  for (auto l : t.applicable_levels) levels.push_back(components::to_string(l));
  return {{"id", t.id},
          {"name", t.name},
          {"description", t.description},
          {"category", t.category},
          {"applicable_uoa_kinds", kinds},
          {"applicable_levels", levels},
          {"produces", t.produces},
          {"functional", t.functional},
          {"class_dependent", t.class_dependent},
          {"class_recomputable", t.class_recomputable}};
}

Out get_tools(Ctx& c) {
  json list = json::array();
  for (const auto& t : components::ToolRegistry::builtin().tools()) list.push_back(tool_json(t));
  return {200, list};
}

Out get_applicable(Ctx& c) {
  const auto uoa = UoaPath::parse(query_param(c, "uoa"));
  json list = json::array();
  for (const auto* t : components::applicable_tools(uoa, components::ToolRegistry::builtin(), c.catalog))
    list.push_back(tool_json(*t));
  return {200, {{"uoa", uoa.str()}, {"tools", list}}};
}

Out post_widget(Ctx& c) {
  allow_fields(c.body, {"tool", "uoa", "classes", "checkpoint", "id", "execute"});
  const auto tool_id = get_as<std::string>(c.body, "tool");
  const auto* tool = components::ToolRegistry::builtin().find(tool_id);
  if (!tool) throw NotFoundError("unknown tool", tool_id);
  const auto uoa = UoaPath::parse(get_as<std::string>(c.body, "uoa"));
  std::string checkpoint = "latest";
  if (c.body.contains("checkpoint") && !c.body["checkpoint"].is_null()) {
    const auto& cp = c.body["checkpoint"];
    checkpoint = cp.is_number_integer() ? std::to_string(cp.get<std::int64_t>()) : get_as<std::string>(c.body, "checkpoint");
  }
  std::string id = c.body.contains("id") ? get_as<std::string>(c.body, "id")
                                         : "w" + std::to_string(c.services.next_widget.fetch_add(1));
  const auto w = components::instantiate_widget(*tool, uoa, c.catalog, optional_classes(c.body), checkpoint, id);
  json out = components::to_json(w);
  if (c.body.value("execute", false)) {
    out["data"] = json::array();
    for (const auto& q : w.queries) out["data"].push_back(components::execute_query(c.catalog, q, &c.services.notes));
  }
  return {200, out};
}

Out post_widget_query(Ctx& c) {
  allow_fields(c.body, {"query"});
  return {200, components::execute_query(c.catalog, components::parse_bound_query(require(c.body, "query")),
                                         &c.services.notes)};
}

Out post_regroup(Ctx& c) {
  allow_fields(c.body, {"group", "mode", "members"});
  const auto& g = require(c.body, "group");
  components::WidgetGroup group;
  try {
    group.id = g.at("id").get<std::string>();
    group.members = g.at("members").get<std::vector<std::string>>();
  } catch (const json::exception&) {
    throw InvalidArgument("group needs id and members");
  }
  const auto mode = components::parse_group_mode(get_as<std::string>(c.body, "mode"));
  if (!mode) throw InvalidArgument("unknown group mode");
  std::vector<components::WidgetData> members;
  for (const auto& m : c.body.value("members", json::array())) members.push_back(components::parse_widget_data(m));
  return {200, components::to_json(components::regroup(group, *mode, members))};
}

Out post_class_selection(Ctx& c) {
  allow_fields(c.body, {"selection", "widgets"});
  std::vector<components::WidgetInstance> widgets;
  for (const auto& w : c.body.value("widgets", json::array())) widgets.push_back(components::parse_widget(w));
  const auto r = components::apply_class_selection(get_as<std::vector<std::int64_t>>(c.body, "selection"),
                                                   c.catalog.class_labels.size(), widgets,
                                                   components::ToolRegistry::builtin());
  json requery = json::array();
  for (const auto& w : r.requery) requery.push_back(components::to_json(w));
  return {200,
          {{"requery", requery},
           {"warned", r.warned},
           {"unaffected", r.unaffected},
           {"possible_selections", components::class_selection_count(c.catalog.class_labels.size())}}};
}

Out post_dimensions(Ctx& c) { return {200, components::to_json(components::resolve_dimensions(components::parse_dimensions(c.body)))}; }

Out get_notes(Ctx& c) {
  std::optional<std::string> uoa;
  if (auto it = c.request.query.find("uoa"); it != c.request.query.end() && !it->second.empty())
    uoa = UoaPath::parse(it->second).str();
  json list = json::array();
  for (const auto& n : c.services.notes.list(uoa)) list.push_back(components::to_json(n));
  return {200, list};
}

Out post_note(Ctx& c) {
  allow_fields(c.body, {"uoa", "text"});
  const auto uoa = UoaPath::parse(get_as<std::string>(c.body, "uoa"));
  resolve(uoa, c.catalog);
  return {201, components::to_json(c.services.notes.add(uoa.str(), get_as<std::string>(c.body, "text")))};
}

Out get_session(Ctx& c) {
  const auto s = c.services.sessions.load(c.params.at(0));
  if (!s) throw NotFoundError("unknown session", c.params.at(0));
  return {200, components::to_json(*s)};
}

Out put_session(Ctx& c) {
  auto body = c.body;
  if (!body.contains("id")) body["id"] = c.params.at(0);
  auto s = components::parse_session(body);
  if (s.id != c.params.at(0)) throw InvalidArgument("session id does not match the route");
  c.services.sessions.save(s);
  return {200, components::to_json(s)};
}

Out get_version(Ctx& c) { return {200, {{"catalog_version", c.catalog.version}, {"service", "0.3.0"}}}; }
Out get_openapi(Ctx&) { return {200, ApiService::route_listing()}; }

std::vector<Route> make_routes() {
  const std::string id = "([A-Za-z0-9_][A-Za-z0-9_.-]*)";
  const std::string sel = "(\\*|latest|-?[0-9]+)";
  std::vector<Route> r{
      {"GET", "/models", true, "ids of all models", get_models, {}},
      {"GET", "/models/{id}/info", true, "model database record", get_info, {}},
      {"GET", "/models/{id}/graph", true, "architecture graph", get_graph, {}},
      {"GET", "/models/{id}/metrics", true, "metric series per epoch", get_metrics, {}},
      {"GET", "/models/{id}/checkpoints", true, "checkpoint bundles and their tensors", get_checkpoints, {}},
      {"GET", "/experiments/tree", true, "model tree (experiments, nodes, edges)", get_tree, {}},
      {"GET", "/search", true, "localization badges for ?kind=", get_search, {}},
      {"GET", "/structures/{id}", true, "skip connections and multi-branches", get_structures, {}},
      {"POST", "/models/{id}/checkpoints/{epoch|*|latest}/query", true, "transformed tensor query", post_query, {}},
      {"POST", "/models/{id}/checkpoints/{epoch|latest}/neurons", true, "neuron-weight view of a layer", post_neurons, {}},
      {"POST", "/models/{id}/checkpoints/{epoch|latest}/neurons_by_class", true, "neurons x classes matrix",
       post_neurons_by_class, {}},
      {"POST", "/interestingness", true, "interestingness report", post_interestingness, {}},
      {"POST", "/models/{id}/branch", false, "child header with this model as parent", post_branch, {}},
      {"POST", "/headers/validate", false, "validate a model header against the catalog", post_validate_header, {}},
      {"GET", "/tools", true, "tool registry", get_tools, {}},
      {"GET", "/tools/applicable", true, "tools applicable to ?uoa=", get_applicable, {}},
      {"POST", "/widgets", false, "instantiate a widget", post_widget, {}},
      {"POST", "/widgets/query", false, "execute a bound widget query", post_widget_query, {}},
      {"POST", "/widgets/regroup", false, "group widgets side by side, on a common scale or merged", post_regroup, {}},
      {"POST", "/class-selection", false, "requery and warning sets for a class selection", post_class_selection, {}},
      {"POST", "/dimensions/resolve", false, "propagate design-dimension constraints", post_dimensions, {}},
      {"GET", "/notes", false, "notes, optionally for ?uoa=", get_notes, {}},
      {"POST", "/notes", false, "add a note", post_note, {}},
      {"GET", "/sessions/{id}", false, "load a session document", get_session, {}},
      {"PUT", "/sessions/{id}", false, "store a session document", put_session, {}},
      {"GET", "/version", false, "catalog version", get_version, {}},
      {"GET", "/openapi", false, "this listing", get_openapi, {}},
  };
  for (auto& route : r) {
    std::string p = route.pattern;
    p = std::regex_replace(p, std::regex("\\{epoch\\|\\*\\|latest\\}|\\{epoch\\|latest\\}"), sel);
    p = std::regex_replace(p, std::regex("\\{id\\}"), id);
    route.re = std::regex("^" + p + "/?$");
  }
  return r;
}

const std::vector<Route>& routes() {
  static const std::vector<Route> r = make_routes();
  return r;
}

Response json_response(int status, const json& body) {
  Response r;
  r.status = status;
  r.body = body.dump();
  r.headers["Content-Type"] = "application/json";
  return r;
}

}  // namespace

ApiService::ApiService(std::filesystem::path root, store::CatalogPtr initial, ServiceOptions options)
    : root_(std::move(root)), catalog_(std::move(initial)), cache_(options.cache_bytes), notes_(root_), sessions_(root_) {}

json ApiService::route_listing() {
  json list = json::array();
  for (const auto& r : routes())
    list.push_back({{"method", r.method}, {"path", r.pattern}, {"cached", r.cacheable}, {"summary", r.summary}});
  return {{"service", "nnprobe"}, {"routes", list}};
}

Response ApiService::handle(const Request& request) {
  const auto snapshot = catalog_.get();
  Services services{notes_, sessions_, next_widget_};
  Response response;
  try {
    const Route* route = nullptr;
    std::smatch match;
    bool path_known = false;
    for (const auto& r : routes()) {
      if (!std::regex_match(request.path, match, r.re)) continue;
      path_known = true;
      if (request.method == r.method) {
        route = &r;
        break;
      }
    }
    if (!route) {
      if (path_known) throw HttpError{405, {{"error", "method not allowed"}, {"id", request.path}}};
      throw HttpError{404, {{"error", "no such route"}, {"id", request.path}}};
    }
    std::vector<std::string> params;
    for (std::size_t i = 1; i < match.size(); ++i) params.push_back(match[i]);

    json body = json::object();
    if (!request.body.empty()) {
      try {
        body = json::parse(request.body);
      } catch (const json::parse_error& e) {
        throw HttpError{400, {{"error", std::string("invalid JSON body: ") + e.what()}}};
      }
    }

    std::optional<CacheKey> key;
    if (route->cacheable) {
      std::string q;
      for (const auto& [k, v] : request.query) q += (q.empty() ? "?" : "&") + k + "=" + v;
      key = make_cache_key(snapshot->version, std::string(route->method) + " " + request.path + q, body);
      if (auto hit = cache_.get(*key)) {
        response.status = 200;
        response.body = *hit->body;
        response.headers = {{"Content-Type", "application/json"}, {"Cached", "true"}, {"Cache-Key", key->hex()}};
        response.headers["Catalog-Version"] = std::to_string(snapshot->version);
        return response;
      }
    }
    Ctx ctx{*snapshot, std::move(params), request, std::move(body), services};
    const auto out = route->fn(ctx);
    response = json_response(out.status, out.body);
    if (key && out.status == 200) {
      cache_.put(*key, response.body);
      response.headers["Cache-Key"] = key->hex();
    }
  } catch (const HttpError& e) {
    response = json_response(e.status, e.body);
  } catch (const NotFoundError& e) {
    response = json_response(404, {{"error", e.what()}, {"id", e.id()}});
  } catch (const components::DimensionConflict& e) {
    response = json_response(400, {{"error", e.what()}, {"conflict", {e.first(), e.second()}}});
  } catch (const transform::TransformError& e) {
    json b{{"error", e.what()}};
    if (e.op_index()) b["op_index"] = *e.op_index();
    response = json_response(400, b);
  } catch (const InvalidArgument& e) {
    response = json_response(400, {{"error", e.what()}});
  } catch (const json::exception& e) {
    response = json_response(400, {{"error", std::string("invalid request: ") + e.what()}});
  } catch (const std::exception& e) {
    response = json_response(500, {{"error", e.what()}});
  }
  response.headers["Cached"] = "false";
  response.headers["Catalog-Version"] = std::to_string(snapshot->version);
  return response;
}

}  // namespace nnprobe::api

#include <algorithm>

#include "nnprobe/components.hpp"

namespace nnprobe::components {

namespace {

template <typename E>
using Names = std::vector<std::pair<E, std::string_view>>;

const Names<DataKind> kData{{DataKind::structural, "structural"},
                            {DataKind::scalar, "scalar"},
                            {DataKind::n_dimensional, "n_dimensional"},
                            {DataKind::function, "function"}};
const Names<Task> kTask{{Task::assessment, "assessment"}, {Task::verification, "verification"},
                        {Task::comparison, "comparison"}};
const Names<Level> kLevel{{Level::multi_model, "multi_model"},
                          {Level::single_model, "single_model"},
                          {Level::layer_unit, "layer_unit"},
                          {Level::weight_neuron, "weight_neuron"}};
const Names<Processing> kProcessing{{Processing::raw, "raw"},
                                    {Processing::transformation, "transformation"},
                                    {Processing::aggregation, "aggregation"},
                                    {Processing::statistical_descriptors, "statistical_descriptors"}};
const Names<Representation> kRepresentation{{Representation::visualization, "visualization"},
                                            {Representation::verbalization, "verbalization"}};
const Names<Dependency> kDependency{{Dependency::none, "none"},
                                    {Dependency::dataset, "dataset"},
                                    {Dependency::model, "model"},
                                    {Dependency::layer, "layer"}};
const Names<DataSource> kSource{{DataSource::architecture, "architecture"}, {DataSource::metrics, "metrics"},
                                {DataSource::weights, "weights"},           {DataSource::activations, "activations"},
                                {DataSource::samples, "samples"},           {DataSource::predictions, "predictions"},
                                {DataSource::notes, "notes"}};

template <typename E>
std::string_view name(const Names<E>& names, E v) {
  for (const auto& [e, n] : names)
    if (e == v) return n;
  return "?";
}

template <typename E>
E value(const Names<E>& names, const std::string& slot, const nlohmann::json& j) {
  if (!j.is_string()) throw InvalidArgument("invalid parameter: " + slot + " must be a string");
  const auto s = j.get<std::string>();
  for (const auto& [e, n] : names)
    if (n == s) return e;
  throw InvalidArgument("invalid parameter: unknown " + slot + " value " + s);
}

template <typename E>
std::string eq(const char* slot, const Names<E>& names, E v) {
  return std::string(slot) + "=" + std::string(name(names, v));
}

template <typename E>
std::string ne(const char* slot, const Names<E>& names, E v) {
  return std::string(slot) + "!=" + std::string(name(names, v));
}

template <typename E>
bool fix(Slot<E>& slot, E v, const char* slot_name, const Names<E>& names, const std::string& reason) {
  if (slot.value && *slot.value != v) throw DimensionConflict(reason, eq(slot_name, names, *slot.value));
  if (slot.is_excluded(v)) throw DimensionConflict(reason, ne(slot_name, names, v));
  if (slot.value) return false;
  slot.value = v;
  return true;
}

template <typename E>
bool exclude(Slot<E>& slot, E v, const char* slot_name, const Names<E>& names, const std::string& reason) {
  if (slot.value == v) throw DimensionConflict(reason, eq(slot_name, names, v));
  if (slot.is_excluded(v)) return false;
  slot.excluded.push_back(v);
  return true;
}

template <typename E>
void check_user_slot(const Slot<E>& slot, const char* slot_name, const Names<E>& names) {
  if (slot.value && slot.is_excluded(*slot.value))
    throw DimensionConflict(eq(slot_name, names, *slot.value), ne(slot_name, names, *slot.value));
}

template <typename E>
nlohmann::json slot_json(const Slot<E>& slot, const Names<E>& names) {
  auto values = nlohmann::json::array();
  for (auto e : slot.excluded) values.push_back(name(names, e));
  if (slot.value) {
    nlohmann::json j{{"state", "fixed"}, {"value", name(names, *slot.value)}};
    if (!values.empty()) j["excluded"] = values;
    return j;
  }
  if (slot.excluded.empty()) return {{"state", "free"}};
  return {{"state", "excluded"}, {"values", values}};
}

template <typename E>
Slot<E> parse_slot(const nlohmann::json& doc, const std::string& key, const Names<E>& names) {
  Slot<E> slot;
  if (!doc.contains(key) || doc[key].is_null()) return slot;
  const auto& j = doc[key];
  if (j.is_string()) {
    slot.value = value(names, key, j);
    return slot;
  }
  if (!j.is_object()) throw InvalidArgument("invalid parameter: " + key + " must be a string or object");
  if (j.contains("value") && !j["value"].is_null()) slot.value = value(names, key, j["value"]);
  if (j.contains("fixed") && !j["fixed"].is_null()) slot.value = value(names, key, j["fixed"]);
  for (const char* list : {"values", "excluded"})
    if (j.contains(list)) {
      if (!j[list].is_array()) throw InvalidArgument("invalid parameter: " + key + "." + list + " must be an array");
      for (const auto& v : j[list]) slot.excluded.push_back(value(names, key, v));
    }
  if (j.value("state", "") == "fixed" && !slot.value) throw InvalidArgument("invalid parameter: " + key + " has no value");
  return slot;
}

}  // namespace

std::string_view to_string(DataKind v) { return name(kData, v); }
std::string_view to_string(Task v) { return name(kTask, v); }
std::string_view to_string(Level v) { return name(kLevel, v); }
std::string_view to_string(Processing v) { return name(kProcessing, v); }
std::string_view to_string(Representation v) { return name(kRepresentation, v); }
std::string_view to_string(Dependency v) { return name(kDependency, v); }
std::string_view to_string(DataSource v) { return name(kSource, v); }

bool DimensionState::fully_fixed() const {
  return data.fixed() && task.fixed() && level.fixed() && processing.fixed() && representation.fixed() &&
         dependencies.fixed();
}

Level level_of(UoaKind kind) {
  switch (kind) {
    case UoaKind::experiment:
      return Level::multi_model;
    case UoaKind::model:
      return Level::single_model;
    case UoaKind::layer:
    case UoaKind::op:
    case UoaKind::variable:
      return Level::layer_unit;
    case UoaKind::neuron:
    case UoaKind::weight:
      return Level::weight_neuron;
  }
  return Level::single_model;
}

DimensionState resolve_dimensions(DimensionState s) {
  s.dependencies = {};
  check_user_slot(s.data, "data", kData);
  check_user_slot(s.task, "task", kTask);
  check_user_slot(s.level, "level", kLevel);
  check_user_slot(s.processing, "processing", kProcessing);
  check_user_slot(s.representation, "representation", kRepresentation);

  bool changed = true;
  while (changed) {
    changed = false;
    if (s.task.value == Task::comparison)
      changed |= fix(s.level, Level::multi_model, "level", kLevel, "task=comparison");
    if (s.data.value == DataKind::structural) {
      changed |= exclude(s.processing, Processing::aggregation, "processing", kProcessing, "data=structural");
      if (s.representation.value == Representation::visualization)
        changed |= fix(s.processing, Processing::transformation, "processing", kProcessing,
                       "data=structural+representation=visualization");
      if (s.representation.value == Representation::verbalization)
        changed |= fix(s.processing, Processing::statistical_descriptors, "processing", kProcessing,
                       "data=structural+representation=verbalization");
    }
    if (s.level.value == Level::multi_model && !s.spans_models) {
      s.spans_models = true;
      changed = true;
    }
  }

  if (s.dependency_hint) {
    s.dependencies.value = *s.dependency_hint;
  } else if (s.source) {
    switch (*s.source) {
      case DataSource::activations:
      case DataSource::samples:
      case DataSource::predictions:
        s.dependencies.value = Dependency::dataset;
        break;
      default:
        s.dependencies.value = Dependency::none;
    }
  } else if (s.data.value && *s.data.value != DataKind::n_dimensional) {
    s.dependencies.value = Dependency::none;
  }
  return s;
}

nlohmann::json to_json(const DimensionState& s) {
  nlohmann::json j{{"data", slot_json(s.data, kData)},
                   {"task", slot_json(s.task, kTask)},
                   {"level", slot_json(s.level, kLevel)},
                   {"processing", slot_json(s.processing, kProcessing)},
                   {"representation", slot_json(s.representation, kRepresentation)},
                   {"dependencies", slot_json(s.dependencies, kDependency)},
                   {"spans_models", s.spans_models},
                   {"fully_fixed", s.fully_fixed()}};
  j["source"] = s.source ? nlohmann::json(name(kSource, *s.source)) : nlohmann::json();
  j["dependency_hint"] = s.dependency_hint ? nlohmann::json(name(kDependency, *s.dependency_hint)) : nlohmann::json();
  return j;
}

DimensionState parse_dimensions(const nlohmann::json& doc) {
  if (!doc.is_object()) throw InvalidArgument("invalid parameter: dimension state must be an object");
  static const std::vector<std::string> known{"data",         "task",   "level",           "processing",
                                              "representation", "dependencies", "spans_models", "source",
                                              "dependency_hint", "fully_fixed"};
  for (const auto& [k, _] : doc.items())
    if (std::find(known.begin(), known.end(), k) == known.end())
      throw InvalidArgument("invalid parameter: unknown dimension " + k);
  DimensionState s;
  s.data = parse_slot(doc, "data", kData);
  s.task = parse_slot(doc, "task", kTask);
  s.level = parse_slot(doc, "level", kLevel);
  s.processing = parse_slot(doc, "processing", kProcessing);
  s.representation = parse_slot(doc, "representation", kRepresentation);
  s.dependencies = parse_slot(doc, "dependencies", kDependency);
  s.spans_models = doc.value("spans_models", false);
  if (doc.contains("source") && !doc["source"].is_null()) s.source = value(kSource, "source", doc["source"]);
  if (doc.contains("dependency_hint") && !doc["dependency_hint"].is_null())
    s.dependency_hint = value(kDependency, "dependency_hint", doc["dependency_hint"]);
  return s;
}

}  // namespace nnprobe::components

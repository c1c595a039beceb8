#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "nnprobe/api.hpp"
#include "nnprobe/components.hpp"
#include "nnprobe/fixture.hpp"
#include "nnprobe/stats.hpp"
#include "nnprobe/store.hpp"
#include "nnprobe/transform.hpp"

namespace py = pybind11;
using namespace nnprobe;

namespace {

py::array_t<double> to_numpy(const Shape& shape, const std::vector<double>& values) {
  std::vector<py::ssize_t> dims(shape.begin(), shape.end());
  py::array_t<double> out(dims);
  std::copy(values.begin(), values.end(), out.mutable_data());
  return out;
}

Tensor from_numpy(py::array_t<double, py::array::c_style | py::array::forcecast> a, DType dtype) {
  Tensor t;
  t.dtype = dtype;
  for (py::ssize_t i = 0; i < a.ndim(); ++i) t.shape.push_back(a.shape(i));
  t.values.assign(a.data(), a.data() + a.size());
  return t;
}

struct Catalog {
  store::CatalogPtr ptr;

  const store::LoadedModel& model(const std::string& id) const {
    auto m = ptr->find(id);
    if (!m) throw NotFoundError("model", id);
    return *m;
  }
};

class Service {
 public:
  Service(const std::string& root, std::size_t cache_mb)
      : service_(root, store::load_catalog(root), api::ServiceOptions{cache_mb << 20}),
        watcher_(root, service_.catalog()) {}

  py::tuple handle(const std::string& method, const std::string& path, std::map<std::string, std::string> query,
                   const std::string& body) {
    api::Request req{method, path, std::move(query), body};
    api::Response resp;
    {
      py::gil_scoped_release nogil;
      resp = service_.handle(req);
    }
    return py::make_tuple(resp.status, resp.headers, py::bytes(resp.body));
  }

  bool reload() {
    py::gil_scoped_release nogil;
    return watcher_.poll_once();
  }
  std::uint64_t version() { return service_.catalog().get()->version; }

 private:
  api::ApiService service_;
  api::CatalogWatcher watcher_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "nnprobe core: log store, transforms and the query service";

  static py::exception<Error> base(m, "Error", PyExc_RuntimeError);
  static py::exception<FormatError> format_error(m, "FormatError", base.ptr());
  static py::exception<NotFoundError> not_found(m, "NotFoundError", base.ptr());
  static py::exception<InvalidArgument> invalid(m, "InvalidArgument", base.ptr());
  static py::exception<transform::TransformError> transform_error(m, "TransformError", base.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const FormatError& e) {
      PyErr_SetString(format_error.ptr(), e.what());
    } catch (const NotFoundError& e) {
      PyErr_SetString(not_found.ptr(), e.what());
    } catch (const InvalidArgument& e) {
      PyErr_SetString(invalid.ptr(), e.what());
    } catch (const transform::TransformError& e) {
      PyErr_SetString(transform_error.ptr(), e.what());
    } catch (const Error& e) {
      PyErr_SetString(base.ptr(), e.what());
    } catch (const nlohmann::json::exception& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    }
  });

  py::class_<Catalog>(m, "Catalog")
      .def_property_readonly("version", [](const Catalog& c) { return c.ptr->version; })
      .def_property_readonly("class_labels", [](const Catalog& c) { return c.ptr->class_labels; })
      .def_property_readonly("root", [](const Catalog& c) { return c.ptr->root.string(); })
      .def("model_ids",
           [](const Catalog& c) {
             std::vector<std::string> ids;
             for (const auto& model : c.ptr->models) ids.push_back(model.id());
             return ids;
           })
      .def("record", [](const Catalog& c, const std::string& id) { return nlohmann::json(c.model(id).record).dump(); })
      .def("graph", [](const Catalog& c, const std::string& id) { return nlohmann::json(c.model(id).graph).dump(); })
      .def("epochs",
           [](const Catalog& c, const std::string& id) {
             std::vector<std::int64_t> epochs;
             for (const auto& b : c.model(id).checkpoints) epochs.push_back(b.epoch);
             return epochs;
           })
      .def("paths",
           [](const Catalog& c, const std::string& id, std::int64_t epoch) {
             auto b = c.model(id).checkpoint(epoch);
             if (!b) throw NotFoundError("checkpoint", std::to_string(epoch));
             std::vector<std::string> out;
             for (const auto& [path, ref] : b->tensors) out.push_back(path);
             return out;
           })
      .def("read",
           [](const Catalog& c, const std::string& id, std::int64_t epoch, const std::string& path) {
             auto b = c.model(id).checkpoint(epoch);
             if (!b) throw NotFoundError("checkpoint", std::to_string(epoch));
             auto t = b->read(path);
             return to_numpy(t.shape, t.values);
           })
      .def("validate_header",
           [](const Catalog& c, const std::string& header) {
             return store::validate_header(nlohmann::json::parse(header).get<store::ModelHeader>(), *c.ptr);
           })
      .def("logical_content", [](const Catalog& c) { return store::logical_content(*c.ptr).dump(); });

  m.def(
      "load_catalog", [](const std::string& root) { return Catalog{store::load_catalog(root)}; }, py::arg("root"));
  m.def(
      "generate_fixture",
      [](const std::string& spec, std::uint64_t seed, const std::string& out) {
        return Catalog{store::generate_fixture(store::parse_fixture_spec(spec), seed, out)};
      },
      py::arg("spec"), py::arg("seed"), py::arg("out"));

  m.def(
      "read_tensor",
      [](const std::string& path, const std::string& dtype, const Shape& shape) {
        auto t = read_tensor(TensorRef{parse_dtype(dtype), shape, path});
        return to_numpy(t.shape, t.values);
      },
      py::arg("path"), py::arg("dtype"), py::arg("shape"));
  m.def(
      "write_tensor",
      [](const std::string& path, py::array_t<double, py::array::c_style | py::array::forcecast> a,
         const std::string& dtype) { write_tensor(from_numpy(a, parse_dtype(dtype)), path); },
      py::arg("path"), py::arg("array"), py::arg("dtype") = "f32");

  m.def(
      "moments",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> a) {
        auto s = stats::moments(std::span<const double>(a.data(), a.size()));
        py::dict d;
        d["count"] = s.count;
        d["mean"] = s.mean;
        d["variance"] = s.variance;
        d["skew"] = s.skew;
        d["min"] = s.min;
        d["max"] = s.max;
        d["sum"] = s.sum;
        return d;
      },
      py::arg("values"));

  m.def(
      "canonical_transform",
      [](const std::string& spec) { return transform::to_json(transform::parse_transform(std::string_view(spec))).dump(); },
      py::arg("spec"));
  m.def(
      "apply_transform",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> a, const std::string& spec,
         std::optional<std::vector<std::int64_t>> labels) {
        auto t = from_numpy(a, DType::f32);
        auto parsed = transform::parse_transform(std::string_view(spec));
        std::optional<std::span<const std::int64_t>> l;
        if (labels) l = std::span<const std::int64_t>(*labels);
        auto value = transform::apply_transform(transform::Array{t.shape, std::move(t.values)}, parsed, l);
        return transform::to_json(value).dump();
      },
      py::arg("array"), py::arg("spec"), py::arg("labels") = py::none());

  m.def(
      "resolve_dimensions",
      [](const std::string& partial) {
        auto state = components::parse_dimensions(nlohmann::json::parse(partial));
        return components::to_json(components::resolve_dimensions(state)).dump();
      },
      py::arg("partial"));

  py::class_<Service>(m, "Service")
      .def(py::init<const std::string&, std::size_t>(), py::arg("root"), py::arg("cache_mb") = 256)
      .def("handle", &Service::handle, py::arg("method"), py::arg("path"),
           py::arg("query") = std::map<std::string, std::string>{}, py::arg("body") = "")
      .def("reload", &Service::reload)
      .def_property_readonly("version", &Service::version);
}

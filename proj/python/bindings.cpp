// SPDX-License-Identifier: Apache-2.0

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "rayserde/cli.hpp"
#include "rayserde/error.hpp"
#include "rayserde/lidar_sim.hpp"
#include "rayserde/metrics.hpp"
#include "rayserde/sector_mamba.hpp"
#include "rayserde/sector_template.hpp"
#include "rayserde/serializers.hpp"
#include "rayserde/space_filling.hpp"
#include "rayserde/ssm.hpp"
#include "rayserde/voxel.hpp"

namespace py = pybind11;
using namespace rayserde;

namespace {

using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using I32Array = py::array_t<std::int32_t, py::array::c_style | py::array::forcecast>;

template <typename T>
py::array_t<T> to_array(const std::vector<T>& v, std::vector<py::ssize_t> shape) {
    py::array_t<T> out(shape);
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

py::array_t<double> matrix_to_array(const Matrix& m) {
    return to_array(m.data, {static_cast<py::ssize_t>(m.rows), static_cast<py::ssize_t>(m.cols)});
}

Matrix array_to_matrix(const F64Array& a) {
    if (a.ndim() != 2) throw ContractError(fmt::format("expected a 2-D array, got {} dims", a.ndim()));
    Matrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
    std::copy(a.data(), a.data() + a.size(), m.data.begin());
    return m;
}

py::array_t<std::int32_t> coords_array(const std::vector<Cell>& coords) {
    py::array_t<std::int32_t> out({static_cast<py::ssize_t>(coords.size()), py::ssize_t{3}});
    auto r = out.mutable_unchecked<2>();
    for (std::size_t i = 0; i < coords.size(); ++i) {
        r(i, 0) = coords[i].z;
        r(i, 1) = coords[i].y;
        r(i, 2) = coords[i].x;
    }
    return out;
}

SparseVoxelSet make_voxels(const VoxelGridSpec& grid, const I32Array& coords, const F64Array& features,
                           std::optional<py::array_t<std::uint32_t, py::array::c_style | py::array::forcecast>> counts,
                           const std::string& scene_id) {
    if (coords.ndim() != 2 || coords.shape(1) != 3) throw ContractError("coords must have shape (n, 3)");
    if (features.ndim() != 2 || features.shape(0) != coords.shape(0)) {
        throw ContractError("features must have shape (n, channels)");
    }
    SparseVoxelSet v;
    v.spec = grid;
    v.scene_id = scene_id;
    v.channels = static_cast<std::size_t>(features.shape(1));
    auto c = coords.unchecked<2>();
    for (py::ssize_t i = 0; i < coords.shape(0); ++i) v.coords.push_back({c(i, 0), c(i, 1), c(i, 2)});
    v.features.assign(features.data(), features.data() + features.size());
    if (counts) {
        v.point_counts.assign(counts->data(), counts->data() + counts->size());
    } else {
        v.point_counts.assign(v.coords.size(), 1);
    }
    v.validate();
    return v;
}

PointCloud points_from_array(const F64Array& pts, const std::string& scene_id) {
    if (pts.ndim() != 2 || pts.shape(1) != 4) throw ContractError("points must have shape (n, 4)");
    PointCloud cloud;
    cloud.scene_id = scene_id;
    auto r = pts.unchecked<2>();
    for (py::ssize_t i = 0; i < pts.shape(0); ++i) cloud.points.push_back({r(i, 0), r(i, 1), r(i, 2), r(i, 3)});
    return cloud;
}

py::array_t<double> points_to_array(const PointCloud& cloud) {
    py::array_t<double> out({static_cast<py::ssize_t>(cloud.points.size()), py::ssize_t{4}});
    auto r = out.mutable_unchecked<2>();
    for (std::size_t i = 0; i < cloud.points.size(); ++i) {
        const Point& p = cloud.points[i];
        r(i, 0) = p.x;
        r(i, 1) = p.y;
        r(i, 2) = p.z;
        r(i, 3) = p.intensity;
    }
    return out;
}

/// Owns the template a ray-aligned strategy points at.
struct PyStrategy {
    std::shared_ptr<const SectorTemplate> tmpl;
    SerializationStrategy strategy;
};

PyStrategy make_strategy(const std::string& name, std::shared_ptr<const SectorTemplate> tmpl, int order) {
    if (name == "ray") {
        if (!tmpl) throw ConfigError("strategy: 'ray' needs a template");
        return {tmpl, SerializationStrategy::ray_aligned(*tmpl)};
    }
    if (name == "hilbert") return {nullptr, SerializationStrategy::hilbert(order)};
    if (name == "morton") return {nullptr, SerializationStrategy::morton(order)};
    if (name == "axis") return {nullptr, SerializationStrategy::axis_sort()};
    throw ConfigError(fmt::format("strategy: unknown '{}' (expected ray|hilbert|morton|axis)", name));
}

py::object json_to_py(const nlohmann::json& j) {
    return py::module_::import("json").attr("loads")(j.dump());
}

}  // namespace

PYBIND11_MODULE(_rayserde, m) {
    m.doc() = "Ray-aligned sector-wise serialization of sparse LiDAR voxels";

    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", base);
    py::register_exception<BoundsError>(m, "BoundsError", base);
    py::register_exception<FormatError>(m, "FormatError", base);
    py::register_exception<ContractError>(m, "ContractError", base);
    py::register_exception<NumericError>(m, "NumericError", base);
    py::register_exception<CapacityError>(m, "CapacityError", base);
    py::register_exception<LookupError>(m, "LookupError", base);

    py::class_<VoxelGridSpec>(m, "VoxelGridSpec")
        .def(py::init([](std::array<std::int32_t, 3> dims, std::array<double, 3> voxel_size,
                         std::array<double, 3> origin) {
                 auto g = VoxelGridSpec::centered(dims, voxel_size, {origin[0], origin[1], origin[2]});
                 g.validate();
                 return g;
             }),
             py::arg("dims"), py::arg("voxel_size") = std::array<double, 3>{1, 1, 1},
             py::arg("origin") = std::array<double, 3>{0, 0, 0})
        .def_readwrite("dims", &VoxelGridSpec::dims)
        .def_readwrite("voxel_size", &VoxelGridSpec::voxel_size)
        .def_property(
            "origin", [](const VoxelGridSpec& g) { return std::array<double, 3>{g.origin.x, g.origin.y, g.origin.z}; },
            [](VoxelGridSpec& g, std::array<double, 3> o) { g.origin = {o[0], o[1], o[2]}; })
        .def_readwrite("center_x", &VoxelGridSpec::center_x)
        .def_readwrite("center_y", &VoxelGridSpec::center_y)
        .def_property_readonly("cell_count", &VoxelGridSpec::cell_count)
        .def("__repr__", [](const VoxelGridSpec& g) {
            return fmt::format("VoxelGridSpec(dims=[{}, {}, {}], voxel_size=[{}, {}, {}])", g.dims[0], g.dims[1],
                               g.dims[2], g.voxel_size[0], g.voxel_size[1], g.voxel_size[2]);
        });
    m.def("standard_grid", &standard_grid);

    py::class_<SparseVoxelSet>(m, "SparseVoxelSet")
        .def(py::init(&make_voxels), py::arg("grid"), py::arg("coords"), py::arg("features"),
             py::arg("point_counts") = py::none(), py::arg("scene_id") = "")
        .def_property_readonly("coords", [](const SparseVoxelSet& v) { return coords_array(v.coords); })
        .def_property_readonly("features",
                               [](const SparseVoxelSet& v) {
                                   return to_array(v.features, {static_cast<py::ssize_t>(v.size()),
                                                                static_cast<py::ssize_t>(v.channels)});
                               })
        .def_property_readonly("point_counts",
                               [](const SparseVoxelSet& v) {
                                   return to_array(v.point_counts, {static_cast<py::ssize_t>(v.size())});
                               })
        .def_readonly("channels", &SparseVoxelSet::channels)
        .def_readonly("scene_id", &SparseVoxelSet::scene_id)
        .def_readonly("grid", &SparseVoxelSet::spec)
        .def("__len__", &SparseVoxelSet::size);

    m.def(
        "voxelize",
        [](const F64Array& points, const VoxelGridSpec& grid, const std::string& reduce, const std::string& scene_id) {
            VoxelizeResult r = voxelize(points_from_array(points, scene_id), grid, parse_reduce(reduce));
            return py::make_tuple(std::move(r.voxels), r.dropped);
        },
        py::arg("points"), py::arg("grid"), py::arg("reduce") = "mean", py::arg("scene_id") = "",
        "Voxelize an (n, 4) array of x, y, z, intensity. Returns (voxels, dropped).");

    py::class_<SectorTemplate, std::shared_ptr<SectorTemplate>>(m, "SectorTemplate")
        .def_readonly("dims", &SectorTemplate::dims)
        .def_property_readonly("delta_theta", [](const SectorTemplate& t) { return t.config.delta_theta; })
        .def_property_readonly("sector_count", [](const SectorTemplate& t) { return t.config.sector_count(); })
        .def_property_readonly("sector_of_cell",
                               [](const SectorTemplate& t) {
                                   return to_array(t.sector_of_cell, {t.dims[0], t.dims[1], t.dims[2]});
                               })
        .def_property_readonly("key_of_cell",
                               [](const SectorTemplate& t) {
                                   return to_array(t.key_of_cell, {t.dims[0], t.dims[1], t.dims[2]});
                               })
        .def("save", [](const SectorTemplate& t, const std::filesystem::path& p) { write_template(t, p); })
        .def("__eq__", [](const SectorTemplate& a, const SectorTemplate& b) { return a == b; })
        .def("__len__", &SectorTemplate::cell_count);
    m.def(
        "build_template",
        [](const VoxelGridSpec& grid, double delta_theta, unsigned workers) {
            return std::make_shared<SectorTemplate>(
                build_template(grid, SectorConfig::from_grid(grid, delta_theta), {workers}));
        },
        py::arg("grid"), py::arg("delta_theta") = 60.0, py::arg("workers") = 1);
    m.def(
        "load_template", [](const std::filesystem::path& p) { return std::make_shared<SectorTemplate>(read_template(p)); },
        py::arg("path"));

    m.def("azimuth_deg", &azimuth_deg, py::arg("r_x"), py::arg("r_y"));
    m.def("sector_of", &sector_of, py::arg("theta"), py::arg("delta_theta"));

    py::class_<Serialized>(m, "Serialized")
        .def_property_readonly("sector_ids", [](const Serialized& s) { return s.inverse.sector_ids; })
        .def_property_readonly("channels", [](const Serialized& s) { return s.sequences.channels; })
        .def_property_readonly("total_length", [](const Serialized& s) { return s.sequences.total_length(); })
        .def("rows",
             [](const Serialized& s, std::size_t slot) {
                 const auto& seq = s.sequences.sectors.at(slot);
                 return to_array(seq.rows, {static_cast<py::ssize_t>(seq.length())});
             })
        .def("features",
             [](const Serialized& s, std::size_t slot) {
                 const auto& seq = s.sequences.sectors.at(slot);
                 return to_array(seq.features, {static_cast<py::ssize_t>(seq.length()),
                                                static_cast<py::ssize_t>(s.sequences.channels)});
             })
        .def("__len__", [](const Serialized& s) { return s.sequences.sectors.size(); });

    m.def(
        "serialize",
        [](const SparseVoxelSet& voxels, const std::string& strategy,
           std::shared_ptr<const SectorTemplate> tmpl, int order, unsigned workers) {
            if (order == 0) {
                order = min_curve_order(std::max({voxels.spec.dims[0], voxels.spec.dims[1], voxels.spec.dims[2]}));
            }
            const PyStrategy s = make_strategy(strategy, std::move(tmpl), order);
            return spatial_to_sequence(voxels, s.strategy, {workers});
        },
        py::arg("voxels"), py::arg("strategy") = "ray", py::arg("template") = nullptr, py::arg("order") = 0,
        py::arg("workers") = 1);
    m.def(
        "scatter",
        [](const Serialized& s, const std::vector<F64Array>& features, const SparseVoxelSet& target) {
            SectorSequences enhanced = s.sequences;
            if (features.size() != enhanced.sectors.size()) {
                throw ContractError(fmt::format("expected {} feature blocks, got {}", enhanced.sectors.size(),
                                                features.size()));
            }
            for (std::size_t i = 0; i < features.size(); ++i) {
                const Matrix f = array_to_matrix(features[i]);
                if (f.rows != enhanced.sectors[i].length()) {
                    throw ContractError(fmt::format("sector slot {}: expected {} rows, got {}", i,
                                                    enhanced.sectors[i].length(), f.rows));
                }
                enhanced.channels = f.cols;
                enhanced.sectors[i].features = f.data;
            }
            return sequence_to_spatial(enhanced, s.inverse, target);
        },
        py::arg("serialized"), py::arg("features"), py::arg("target"),
        "Route per-sector feature blocks back to their source voxels.");

    m.def("hilbert_key", [](std::array<std::int32_t, 3> c, int order) { return hilbert_key({c[0], c[1], c[2]}, order); });
    m.def("hilbert_cell", [](std::uint64_t k, int order) {
        const Cell c = hilbert_cell(k, order);
        return std::array<std::int32_t, 3>{c.z, c.y, c.x};
    });
    m.def("morton_key", [](std::array<std::int32_t, 3> c, int order) { return morton_key({c[0], c[1], c[2]}, order); });
    m.def("morton_cell", [](std::uint64_t k, int order) {
        const Cell c = morton_cell(k, order);
        return std::array<std::int32_t, 3>{c.z, c.y, c.x};
    });

    py::class_<SsmParams>(m, "SsmParams")
        .def(py::init(&SsmParams::init), py::arg("state_dim"), py::arg("channels"), py::arg("seed") = 0)
        .def_readonly("state_dim", &SsmParams::state_dim)
        .def_readonly("channels", &SsmParams::channels)
        .def_property_readonly("A", [](const SsmParams& p) { return matrix_to_array(p.A); })
        .def_property_readonly("parameter_count", &SsmParams::parameter_count)
        .def("save", [](const SsmParams& p, const std::filesystem::path& path) { write_params(p, path); });
    m.def("load_params", [](const std::filesystem::path& p) { return read_params(p); });
    m.def(
        "selective_scan",
        [](const F64Array& x, const SsmParams& params, const std::string& precision, unsigned workers) {
            const Matrix in = array_to_matrix(x);
            Matrix y;
            {
                py::gil_scoped_release release;
                y = selective_scan(in, params, {workers, parse_precision(precision)});
            }
            return matrix_to_array(y);
        },
        py::arg("x"), py::arg("params"), py::arg("precision") = "f64", py::arg("workers") = 1);
    m.def(
        "grad_check",
        [](const SsmParams& params, const F64Array& x, double eps) {
            const GradCheckReport r = grad_check(params, array_to_matrix(x), eps);
            py::dict d;
            d["worst_param"] = r.worst.name;
            d["analytic"] = r.worst.analytic;
            d["numeric"] = r.worst.numeric;
            d["rel_err"] = r.worst.rel_err;
            d["checked"] = r.checked;
            d["eps"] = r.eps;
            return d;
        },
        py::arg("params"), py::arg("x"), py::arg("eps") = 1e-5);

    py::class_<SectorMambaBlock>(m, "SectorMambaBlock")
        .def(py::init([](std::size_t input_channels, std::size_t model_channels, std::size_t state_dim,
                         std::int32_t radius, std::size_t max_len, std::uint64_t seed) {
                 SectorMambaConfig c;
                 c.input_channels = input_channels;
                 c.model_channels = model_channels;
                 c.state_dim = state_dim;
                 c.radius = radius;
                 c.max_len = max_len;
                 c.seed = seed;
                 return SectorMambaBlock::make(c);
             }),
             py::arg("input_channels") = 4, py::arg("model_channels") = 8, py::arg("state_dim") = 16,
             py::arg("radius") = 1, py::arg("max_len") = 65536, py::arg("seed") = 0)
        .def_readonly("radius", &SectorMambaBlock::radius);
    m.def(
        "sector_forward",
        [](const SparseVoxelSet& voxels, const SectorTemplate& tmpl, const SectorMambaBlock& block,
           unsigned workers, const std::string& precision) {
            SectorForwardResult r;
            {
                py::gil_scoped_release release;
                r = sector_mamba_forward(voxels, tmpl, block, {workers, parse_precision(precision)});
            }
            py::dict stats;
            stats["scan_invocations"] = r.stats.scan_invocations;
            stats["sectors"] = r.stats.sectors;
            stats["longest_sequence"] = r.stats.longest_sequence;
            return py::make_tuple(std::move(r.voxels), stats);
        },
        py::arg("voxels"), py::arg("template"), py::arg("block"), py::arg("workers") = 1,
        py::arg("precision") = "f64");

    py::class_<SensorModel>(m, "SensorModel")
        .def(py::init<>())
        .def_readwrite("beams", &SensorModel::beams)
        .def_readwrite("fov_min_deg", &SensorModel::fov_min_deg)
        .def_readwrite("fov_max_deg", &SensorModel::fov_max_deg)
        .def_readwrite("azimuth_res_deg", &SensorModel::azimuth_res_deg)
        .def_readwrite("max_range", &SensorModel::max_range)
        .def_readwrite("range_noise_sigma", &SensorModel::range_noise_sigma);
    m.def("standard_sensor", &standard_sensor);

    py::class_<Scene>(m, "Scene")
        .def(py::init<>())
        .def_readwrite("ground_plane", &Scene::ground_plane)
        .def("add_box",
             [](Scene& s, std::int32_t id, std::array<double, 3> center, std::array<double, 3> size,
                const std::string& role) {
                 if (role != "target" && role != "occluder") throw ConfigError("role: expected target|occluder");
                 s.boxes.push_back({id, {center[0], center[1], center[2]}, {size[0], size[1], size[2]},
                                    role == "target" ? BoxRole::target : BoxRole::occluder});
             },
             py::arg("id"), py::arg("center"), py::arg("size"), py::arg("role") = "target")
        .def("__len__", [](const Scene& s) { return s.boxes.size(); });
    m.def("make_far_field_scene", &make_far_field_scene, py::arg("seed"));
    m.def("load_scene", &read_scene, py::arg("path"));
    m.def(
        "simulate_scan",
        [](const Scene& scene, const SensorModel& sensor, std::uint64_t seed, unsigned workers) {
            ScanOutput out;
            {
                py::gil_scoped_release release;
                out = simulate_scan(scene, sensor, seed, workers);
            }
            return py::make_tuple(points_to_array(out.cloud),
                                  to_array(out.hit_ids, {static_cast<py::ssize_t>(out.hit_ids.size())}));
        },
        py::arg("scene"), py::arg("sensor"), py::arg("seed") = 0, py::arg("workers") = 1,
        "Returns (points (n, 4), hit box ids (n,), -1 for ground).");
    m.def(
        "returns_per_object",
        [](const Scene& scene, const SensorModel& sensor, std::uint64_t seed) {
            return returns_per_object(simulate_scan(scene, sensor, seed), scene);
        },
        py::arg("scene"), py::arg("sensor"), py::arg("seed") = 0);
    m.def("simulate_suite", &simulate_suite, py::arg("count"), py::arg("base_seed") = 0,
          py::arg("grid") = standard_grid(), py::arg("sensor") = standard_sensor(), py::arg("workers") = 1);

    m.def(
        "compare_strategies",
        [](const std::vector<SparseVoxelSet>& scenes, const std::vector<std::string>& names,
           std::shared_ptr<const SectorTemplate> tmpl, std::size_t K, double far_range_m, std::size_t max_refs,
           std::uint64_t seed, unsigned workers) {
            std::vector<PyStrategy> owned;
            std::vector<SerializationStrategy> strategies;
            const int order = scenes.empty() ? 1
                                             : min_curve_order(std::max({scenes[0].spec.dims[0], scenes[0].spec.dims[1],
                                                                         scenes[0].spec.dims[2]}));
            for (const auto& n : names) {
                owned.push_back(make_strategy(n, tmpl, order));
                strategies.push_back(owned.back().strategy);
            }
            CompareOptions opts;
            opts.K = K;
            opts.far_range_m = far_range_m;
            opts.max_refs_per_scene = max_refs;
            opts.seed = seed;
            opts.workers = workers;
            if (tmpl) opts.delta_theta = tmpl->config.delta_theta;
            nlohmann::json j;
            {
                py::gil_scoped_release release;
                j = to_json(compare_strategies(scenes, strategies, opts));
            }
            return json_to_py(j);
        },
        py::arg("scenes"), py::arg("strategies") = std::vector<std::string>{"ray", "hilbert"},
        py::arg("template") = nullptr, py::arg("K") = 360, py::arg("far_range_m") = 40.0, py::arg("max_refs") = 0,
        py::arg("seed") = 0, py::arg("workers") = 1, "Coherence report as a dict.");

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::vector<std::string> full{"rayserde"};
            full.insert(full.end(), args.begin(), args.end());
            std::vector<const char*> argv;
            for (const auto& a : full) argv.push_back(a.c_str());
            std::ostringstream out, err;
            const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Run a CLI subcommand in-process. Returns (exit_code, stdout, stderr).");
}

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "spd/checkpoint.hpp"
#include "spd/gradcheck.hpp"
#include "spd/parallel.hpp"
#include "spd/pipeline.hpp"

namespace py = pybind11;
using namespace spd;

namespace {

using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

Image to_image(const U8Array& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D uint8 array");
  const auto h = static_cast<std::size_t>(a.shape(0)), w = static_cast<std::size_t>(a.shape(1));
  return Image(w, h, std::vector<std::uint8_t>(a.data(), a.data() + a.size()));
}

U8Array to_array(const std::vector<std::uint8_t>& px, std::size_t w, std::size_t h) {
  U8Array out({h, w});
  std::copy(px.begin(), px.end(), out.mutable_data());
  return out;
}

U8Array to_array(const Image& img) { return to_array(img.pixels, img.width, img.height); }
U8Array to_array(const NoiseMap& map) { return to_array(map.bits, map.width, map.height); }

NoiseMap to_map(const U8Array& a) {
  const Image img = to_image(a);
  return binarize(img);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Two-stage non-extreme salt-and-pepper denoising";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);
  py::register_exception<ImageIoError>(m, "ImageIoError", PyExc_OSError);

  m.def(
      "synthesize",
      [](const U8Array& clean, double density, int salt, int pepper, double salt_fraction, std::uint64_t seed) {
        NoiseConfig cfg;
        cfg.density = density;
        cfg.salt_value = cfg.salt_value_max = static_cast<std::uint8_t>(salt);
        cfg.pepper_value = cfg.pepper_value_min = static_cast<std::uint8_t>(pepper);
        cfg.salt_fraction = salt_fraction;
        cfg.seed = seed;
        if (salt < 0 || salt > 255 || pepper < 0 || pepper > 255) throw ConfigError("salt and pepper must lie in [0,255]");
        const Corrupted c = synthesize(to_image(clean), cfg);
        return py::make_tuple(to_array(c.noisy), to_array(c.map));
      },
      py::arg("clean"), py::arg("density") = 0.2, py::arg("salt") = 239, py::arg("pepper") = 16,
      py::arg("salt_fraction") = 0.5, py::arg("seed") = 0,
      "Corrupts a uint8 image; returns (noisy, map) with map values in {0,1}.");

  m.def(
      "zero_noise", [](const U8Array& noisy, const U8Array& map) { return to_array(zero_noise(to_image(noisy), to_map(map))); },
      py::arg("noisy"), py::arg("map"));
  m.def(
      "median_filter", [](const U8Array& img, std::size_t window) { return to_array(median_filter(to_image(img), window)); },
      py::arg("image"), py::arg("window") = 3);
  m.def(
      "psnr", [](const U8Array& a, const U8Array& b) { return psnr(to_image(a), to_image(b)); }, py::arg("a"),
      py::arg("b"), "PSNR in dB, or None for identical images.");

  m.def("read_image", [](const std::filesystem::path& p) { return to_array(read_image(p)); }, py::arg("path"));
  m.def(
      "write_image", [](const U8Array& img, const std::filesystem::path& p) { write_image(to_image(img), p); },
      py::arg("image"), py::arg("path"));

  py::class_<NetworkState>(m, "Network")
      .def_property_readonly("kind", [](const NetworkState& s) { return std::string(to_string(s.spec.kind)); })
      .def_property_readonly("parameter_count", [](const NetworkState& s) { return param_count(s.spec); })
      .def_property_readonly("names", [](const NetworkState& s) { return s.names; });

  m.def(
      "load_network", [](const std::filesystem::path& p) { return load_checkpoint(p).network; }, py::arg("path"),
      "Network stored in a training checkpoint.");
  m.def(
      "init_network",
      [](const std::string& kind, std::size_t depth, std::size_t width, std::size_t base_channels, std::size_t scales,
         std::size_t blocks, std::uint64_t seed) {
        NetworkSpec spec;
        spec.kind = parse_network_kind(kind);
        spec.depth = depth;
        spec.width = width;
        spec.base_channels = base_channels;
        spec.scales = scales;
        spec.blocks = blocks;
        spec.seed = seed;
        return init_params(spec);
      },
      py::arg("kind"), py::arg("depth") = 7, py::arg("width") = 32, py::arg("base_channels") = 16,
      py::arg("scales") = 4, py::arg("blocks") = 4, py::arg("seed") = 0, "Untrained network with seeded init.");
  m.def(
      "detect",
      [](const NetworkState& det, const U8Array& noisy, double tau) {
        return to_array(threshold_map(detect_probabilities(det, to_image(noisy)), tau));
      },
      py::arg("detector"), py::arg("noisy"), py::arg("tau") = 0.5);
  m.def(
      "restore", [](const NetworkState& den, const U8Array& img) { return to_array(restore(den, to_image(img))); },
      py::arg("denoiser"), py::arg("image"));
  m.def(
      "denoise_two_stage",
      [](const NetworkState& det, const NetworkState& den, const U8Array& noisy, double tau) {
        const TwoStageResult r = denoise_two_stage(det, den, to_image(noisy), tau);
        return py::make_tuple(to_array(r.restored), to_array(r.map));
      },
      py::arg("detector"), py::arg("denoiser"), py::arg("noisy"), py::arg("tau") = 0.5,
      "Returns (restored, detected map).");

  m.def(
      "gradcheck",
      [](std::uint64_t seed) {
        py::list out;
        for (const auto& c : run_gradcheck_suite(seed)) out.append(py::make_tuple(c.name, c.max_rel_error, c.tolerance));
        return out;
      },
      py::arg("seed") = 7, "(name, max relative error, tolerance) for every gradient check.");
  m.def("set_num_threads", &set_num_threads, py::arg("threads"));
}

#include <pybind11/complex.h>
#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cospa/beamforming.hpp"
#include "cospa/eval.hpp"
#include "cospa/model.hpp"
#include "cospa/pipeline.hpp"
#include "cospa/stft.hpp"
#include "cospa/train.hpp"

namespace py = pybind11;
using namespace cospa;

namespace {

using ComplexArray = py::array_t<cplx, py::array::c_style | py::array::forcecast>;
using RealArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

CTensor to_tensor(const ComplexArray& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D complex array");
  const auto r = a.unchecked<2>();
  CTensor t({std::size_t(r.shape(0)), std::size_t(r.shape(1))});
  for (py::ssize_t i = 0; i < r.shape(0); ++i) {
    for (py::ssize_t j = 0; j < r.shape(1); ++j) t.at(std::size_t(i), std::size_t(j)) = r(i, j);
  }
  return t;
}

ComplexArray to_array(const CTensor& t) {
  ComplexArray a({py::ssize_t(t.rows()), py::ssize_t(t.cols())});
  std::copy(t.data().begin(), t.data().end(), a.mutable_data());
  return a;
}

std::vector<double> to_vector(const RealArray& a) {
  if (a.ndim() != 1) throw std::invalid_argument("expected a 1-D real array");
  return {a.data(), a.data() + a.size()};
}

sim::Multichannel to_channels(const RealArray& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a [channels, samples] real array");
  const auto r = a.unchecked<2>();
  sim::Multichannel out(std::size_t(r.shape(0)), std::vector<double>(std::size_t(r.shape(1))));
  for (py::ssize_t c = 0; c < r.shape(0); ++c) {
    for (py::ssize_t i = 0; i < r.shape(1); ++i) out[std::size_t(c)][std::size_t(i)] = r(c, i);
  }
  return out;
}

RealArray from_channels(const sim::Multichannel& x) {
  const std::size_t C = x.size(), N = C ? x.front().size() : 0;
  RealArray a({py::ssize_t(C), py::ssize_t(N)});
  for (std::size_t c = 0; c < C; ++c) std::copy(x[c].begin(), x[c].end(), a.mutable_data() + c * N);
  return a;
}

RealArray from_vector(const std::vector<double>& v) {
  RealArray a(py::ssize_t(v.size()));
  std::copy(v.begin(), v.end(), a.mutable_data());
  return a;
}

model::CospaConfig preset(const std::string& name) {
  if (name == "default") return {};
  if (name == "reduced") return model::CospaConfig::reduced();
  throw std::invalid_argument("unknown preset '" + name + "'");
}

py::dict scene_dict(const pipeline::SceneData& s) {
  py::dict d;
  d["id"] = s.spec.id;
  d["rt60"] = s.spec.room.rt60;
  d["snr_db"] = s.spec.snr_db;
  d["smr_db"] = s.spec.smr_db;
  d["doa_speech"] = s.doa_speech;
  d["doa_noise"] = s.doa_noise;
  d["doa_music"] = s.doa_music;
  d["mixture"] = from_channels(s.mixture);
  d["speech"] = from_channels(s.speech);
  d["noise"] = from_channels(s.noise);
  d["music"] = from_channels(s.music);
  d["target"] = from_vector(s.target);
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Complex-valued spatial autoencoder for multichannel speech enhancement";

  m.def(
      "stft",
      [](const RealArray& x, std::size_t frame_len, std::size_t hop) {
        return to_array(stft::analyze(to_vector(x), stft::FrameSpec::sqrt_hann(frame_len, hop)));
      },
      py::arg("x"), py::arg("frame_len") = 1024, py::arg("hop") = 512, "sqrt-Hann STFT, [frames x bins].");
  m.def(
      "istft",
      [](const ComplexArray& X, std::size_t num_samples, std::size_t frame_len, std::size_t hop) {
        return from_vector(stft::istft(to_tensor(X), stft::FrameSpec::sqrt_hann(frame_len, hop), num_samples));
      },
      py::arg("X"), py::arg("num_samples"), py::arg("frame_len") = 1024, py::arg("hop") = 512);

  m.def("mvdr_weights", &bf::mvdr_weights, py::arg("R"), py::arg("a"), py::arg("loading") = 1e-6);
  m.def("freefield_steering", &bf::freefield_steering, py::arg("doa_deg"), py::arg("mics"), py::arg("spacing"),
        py::arg("freq_hz"), py::arg("c") = 343.0);

  m.def(
      "simulate_scene",
      [](std::uint64_t seed, double duration, std::size_t mics, const std::string& preset_name) {
        sim::SceneRanges r;
        r.duration = duration;
        r.mics = mics;
        sim::SceneSpec s = sim::sample_scene(seed, r);
        s.id = "scene_" + std::to_string(seed);
        pipeline::SceneData scene = pipeline::simulate(s);
        const auto spec = preset(preset_name).frame_spec();
        scene.target = pipeline::compute_target(scene, pipeline::analyze(scene, spec), spec);
        return scene_dict(scene);
      },
      py::arg("seed"), py::arg("duration") = 2.0, py::arg("mics") = 5, py::arg("preset") = "default",
      "Renders a random reverberant scene and its MVDR training target.");

  m.def("sinr_db", &eval::sinr_db, py::arg("speech"), py::arg("noise"), py::arg("music"));
  m.def("sdr_db", &eval::sdr_db, py::arg("reference"), py::arg("estimate"));
  m.def(
      "beampattern",
      [](const ComplexArray& masks, std::size_t mics, std::size_t frame_len, std::size_t hop) {
        const auto spec = stft::FrameSpec::sqrt_hann(frame_len, hop);
        const eval::Beampattern bp = eval::beampattern(to_tensor(masks), mics, spec);
        RealArray a({py::ssize_t(bp.angles_deg.size()), py::ssize_t(bp.bins)});
        std::copy(bp.power_db.begin(), bp.power_db.end(), a.mutable_data());
        return py::make_tuple(from_vector(bp.angles_deg), a);
      },
      py::arg("masks"), py::arg("mics"), py::arg("frame_len") = 1024, py::arg("hop") = 512,
      "Returns (angles_deg, power_db[angles x bins]).");

  py::class_<model::Cospa>(m, "Cospa")
      .def(py::init([](const std::string& p, std::size_t mics, std::uint64_t seed) {
             model::CospaConfig c = preset(p);
             c.mics = mics ? mics : c.mics;
             c.seed = seed;
             return model::Cospa(c);
           }),
           py::arg("preset") = "default", py::arg("mics") = 0, py::arg("seed") = 0)
      .def_static("load", [](const std::string& path) { return model::Cospa::from_checkpoint(load_checkpoint(path)); })
      .def("save", [](const model::Cospa& net, const std::string& path) { save_checkpoint(path, net.to_checkpoint()); })
      .def_property_readonly("mics", [](const model::Cospa& n) { return n.config().mics; })
      .def_property_readonly("frame_len", [](const model::Cospa& n) { return n.config().frame_len; })
      .def_property_readonly("hop", [](const model::Cospa& n) { return n.config().hop; })
      .def_property_readonly("config", [](const model::Cospa& n) { return n.config().to_json(); })
      .def("param_count", [](const model::Cospa& n) { return n.params().real_dof(); })
      .def(
          "infer_masks",
          [](const model::Cospa& n, const ComplexArray& X) {
            CTensor out;
            CTensor masks = n.infer_masks(to_tensor(X), &out);
            return py::make_tuple(to_array(masks), to_array(out));
          },
          py::arg("X"), "Frame-major spectra [T*M x F] -> (masks [T*M x F], output [T x F]).")
      .def(
          "enhance",
          [](const model::Cospa& n, const RealArray& x) {
            return from_vector(pipeline::enhance_stream(n, to_channels(x)));
          },
          py::arg("x"), "Streaming enhancement of [channels, samples]; output lags by one frame.")
      .def(
          "train",
          [](model::Cospa& n, const std::vector<std::uint64_t>& seeds, double duration, int epochs, double lr,
             std::uint64_t seed) {
            const auto spec = n.config().frame_spec();
            std::vector<train::Example> ex;
            for (auto s : seeds) {
              sim::SceneRanges r;
              r.duration = duration;
              r.mics = n.config().mics;
              sim::SceneSpec sp = sim::sample_scene(s, r);
              sp.id = "scene_" + std::to_string(s);
              ex.push_back(pipeline::cospa_example(pipeline::simulate(sp), spec));
            }
            AdamState adam;
            train::History h;
            train::Options o;
            o.epochs = epochs;
            o.learning_rate = lr;
            o.seed = seed;
            py::gil_scoped_release release;
            train::run(n.params().trainable(), adam, ex, train::cospa_loss(n), o, h);
            return h.epoch_loss;
          },
          py::arg("scene_seeds"), py::arg("duration") = 1.0, py::arg("epochs") = 1, py::arg("lr") = 1e-3,
          py::arg("seed") = 0, "Trains on freshly simulated scenes; returns the per-epoch loss in dB.");
}

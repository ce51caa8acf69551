#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "rlt/analysis.hpp"
#include "rlt/config.hpp"
#include "rlt/datagen.hpp"
#include "rlt/errors.hpp"
#include "rlt/trainer.hpp"
#include "rlt/vocab.hpp"

namespace py = pybind11;
using namespace rlt;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array a(shape);
  std::copy(t.values().begin(), t.values().end(), a.mutable_data());
  return a;
}

Tensor from_numpy(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor::from(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

py::dict entry_dict(const DatasetEntry& e) {
  py::dict d;
  d["video"] = to_numpy(e.video);
  d["mask_s1"] = to_numpy(e.masks.m_s1);
  d["mask_s2"] = to_numpy(e.masks.m_s2);
  d["mask_r"] = to_numpy(e.masks.m_r);
  d["prompt"] = decode_prompt(e.prompt);
  d["relation"] = std::string(to_string(e.relation));
  return d;
}

std::optional<std::string> oracle_name(const Array& video) {
  const auto r = relation_oracle(from_numpy(video));
  if (!r) return std::nullopt;
  return std::string(to_string(*r));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Relation LoRA triplet toolkit";

  py::register_exception<Error>(m, "RltError", PyExc_RuntimeError);

  m.def(
      "generate",
      [](const std::string& relation, std::uint64_t seed, std::size_t frames, std::size_t size,
         std::optional<std::string> shape1, std::optional<std::string> shape2) {
        const Relation r = relation_from_string(relation);
        if (shape1.has_value() != shape2.has_value()) throw ConfigError("shape1 and shape2 go together");
        const RelationSpec spec = shape1 ? random_spec(r, shape_from_string(*shape1), shape_from_string(*shape2),
                                                       seed, frames, size, size)
                                         : random_spec(r, seed, frames, size, size);
        return entry_dict(gen_video(spec, frames, size, size));
      },
      py::arg("relation"), py::arg("seed") = 0, py::arg("frames") = 8, py::arg("size") = 32,
      py::arg("shape1") = py::none(), py::arg("shape2") = py::none(),
      "Generate one synthetic two-subject video as a dict of numpy arrays.");

  m.def("relation_oracle", &oracle_name, py::arg("video"),
        "Relation label of an [F, H, W, C] video, or None when undecidable.");
  m.def(
      "temporal_consistency", [](const Array& v) { return temporal_consistency(from_numpy(v)); },
      py::arg("video"));
  m.def(
      "subspace_similarity",
      [](const Array& a, const Array& b, std::size_t r) { return subspace_similarity(from_numpy(a), from_numpy(b), r); },
      py::arg("w1"), py::arg("w2"), py::arg("r"));
  m.def(
      "svd",
      [](const Array& w) {
        const SvdResult s = svd(from_numpy(w));
        auto mat = [](const Matrix& x) { return to_numpy(Tensor::from({x.rows, x.cols}, x.data)); };
        return py::make_tuple(mat(s.U), to_numpy(Tensor::from({s.S.size()}, s.S)), mat(s.V));
      },
      py::arg("w"), "Thin SVD (U, S, V) with W = U diag(S) V^T.");
  m.def("encode_prompt", &encode_prompt, py::arg("text"));
  m.def("decode_prompt", [](const std::vector<int>& ids) { return decode_prompt(ids); }, py::arg("ids"));

  m.def(
      "train",
      [](const std::filesystem::path& data, const std::filesystem::path& out, const std::string& config_json,
         std::optional<std::size_t> iterations) {
        RunConfig cfg = config_json.empty() ? RunConfig{} : run_config_from_json(nlohmann::json::parse(config_json));
        if (iterations) cfg.train.iterations = *iterations;
        const auto ds = read_dataset(data);
        Checkpoint ck;
        {
          py::gil_scoped_release release;
          ck = train(ds, cfg.model, cfg.train);
        }
        save_checkpoint(ck, out);
        return ck.iteration;
      },
      py::arg("data"), py::arg("out"), py::arg("config_json") = "", py::arg("iterations") = py::none(),
      "Train on a dataset directory and write a checkpoint; returns the iteration count.");

  m.def(
      "sample",
      [](const std::filesystem::path& ckpt, const std::string& prompt, std::size_t steps, double cfg_scale,
         std::uint64_t seed) {
        const Checkpoint ck = load_checkpoint(ckpt);
        Rng rng(seed);
        Tensor v;
        {
          py::gil_scoped_release release;
          v = sample(ck, encode_prompt(prompt), steps, cfg_scale, rng);
        }
        return to_numpy(v);
      },
      py::arg("ckpt"), py::arg("prompt"), py::arg("steps") = 32, py::arg("cfg_scale") = 6.0, py::arg("seed") = 0);
}

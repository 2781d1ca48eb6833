#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "moevit/attention.hpp"
#include "moevit/checks.hpp"
#include "moevit/config.hpp"
#include "moevit/cost_model.hpp"
#include "moevit/io.hpp"
#include "moevit/model.hpp"

namespace py = pybind11;
using namespace moevit;

namespace {

Tensor tensor_from_list(const std::vector<size_t>& shape,
                        const std::vector<double>& data) {
  return Tensor::from(shape, data);
}

MultiChannelImage image_from_list(size_t channels, size_t height, size_t width,
                                  const std::vector<double>& pixels) {
  if (pixels.size() != channels * height * width)
    throw dim_error("pixel buffer size does not match C*H*W");
  return MultiChannelImage{height, width, channels, pixels};
}

}  // namespace

PYBIND11_MODULE(_moevit, m) {
  m.doc() = "Channel-MoE attention: routing, cross-attention, cost model";

  py::register_exception<config_error>(m, "ConfigError");
  py::register_exception<dim_error>(m, "DimError");
  py::register_exception<contract_error>(m, "ContractError");
  py::register_exception<train_error>(m, "TrainError");

  py::class_<Tensor>(m, "Tensor")
      .def_static("from_data", &tensor_from_list, py::arg("shape"),
                  py::arg("data"))
      .def_property_readonly("shape", &Tensor::shape)
      .def_property_readonly(
          "data", [](const Tensor& t) { return t.data(); })
      .def("at", &Tensor::at);

  py::class_<CostReport>(m, "CostReport")
      .def_readonly("attention_score_flops", &CostReport::attention_score_flops)
      .def_readonly("attention_value_flops", &CostReport::attention_value_flops)
      .def_readonly("q_proj_flops", &CostReport::q_proj_flops)
      .def_readonly("kv_proj_flops", &CostReport::kv_proj_flops)
      .def_readonly("o_proj_flops", &CostReport::o_proj_flops)
      .def("total_flops", &CostReport::total_flops)
      .def("gflops", &CostReport::gflops);

  m.def("moe_cost", &moe_cost, py::arg("n"), py::arg("c"), py::arg("d"),
        py::arg("k"));
  m.def("dense_cost", &dense_cost, py::arg("n"), py::arg("c"), py::arg("d"));
  m.def("vanilla_cost", &vanilla_cost, py::arg("n"), py::arg("d"));
  m.def("activated_params", &activated_params, py::arg("n"), py::arg("c"),
        py::arg("d"), py::arg("heads"), py::arg("layers"), py::arg("patch_dim"),
        py::arg("k"), py::arg("num_classes"));
  m.def("verify_paper_points", [] {
    std::vector<std::tuple<std::string, double, double, bool>> out;
    for (const auto& p : verify_paper_points())
      out.emplace_back(p.label, p.expected_gflops, p.actual_gflops, p.pass());
    return out;
  });

  py::class_<MultiChannelImage>(m, "MultiChannelImage")
      .def(py::init(&image_from_list), py::arg("channels"), py::arg("height"),
           py::arg("width"), py::arg("pixels"))
      .def_readonly("height", &MultiChannelImage::height)
      .def_readonly("width", &MultiChannelImage::width)
      .def_readonly("channels", &MultiChannelImage::channels)
      .def_readonly("pixels", &MultiChannelImage::pixels);

  // Routing + attention on raw token matrices, for cross-checking from
  // python: returns (gates, expert_sets, counts, batched_out, oracle_out).
  m.def(
      "route_and_attend",
      [](size_t n_patches, size_t dim, size_t channels, size_t heads, size_t k,
         uint64_t seed, bool uniform_agg) {
        Prng rng(seed);
        std::vector<int> active(channels);
        for (size_t i = 0; i < channels; ++i) active[i] = (int)i;
        TokenGrid grid;
        grid.n_patches = n_patches;
        grid.dim = dim;
        grid.active_channels = active;
        grid.tokens = Tensor::from({n_patches * channels, dim},
                                   rng.normal_vec(n_patches * channels * dim));
        RouterParams router = RouterParams::init(dim, channels, rng);
        AttentionParams attn = AttentionParams::init(dim, channels, heads, rng);
        RoutingTable routing = route(grid, router, k);
        const AggMode mode =
            uniform_agg ? AggMode::kUniform : AggMode::kGateWeighted;
        Tensor batched = channel_moe_forward(grid, routing, attn, mode).tokens;
        Tensor oracle = naive_oracle(grid, routing, attn, mode);
        return py::make_tuple(routing.gates.data(), routing.expert_sets,
                              routing.counts, batched.data(), oracle.data());
      },
      py::arg("n_patches"), py::arg("dim"), py::arg("channels"),
      py::arg("heads"), py::arg("k"), py::arg("seed"),
      py::arg("uniform_agg") = false);

  m.def("write_mct1", &write_mct1, py::arg("path"), py::arg("tensor"));
  m.def("read_mct1", &read_mct1, py::arg("path"),
        py::arg("requires_grad") = false);

  m.def(
      "run_checks",
      [](uint64_t seed, size_t cases) {
        CheckSummary s = run_all_checks(seed, cases);
        std::vector<std::string> failures;
        for (const auto& f : s.failures)
          failures.push_back(f.suite + ": " + f.detail);
        return py::make_tuple(s.cases_run, failures);
      },
      py::arg("seed") = 1, py::arg("cases") = 20);

  m.def(
      "train_synthetic",
      [](const std::string& config_text) {
        RunConfig cfg = parse_config_text(config_text);
        cfg.spec.validate();
        TrainState state = train(cfg.spec, cfg.task, cfg.opt);
        std::vector<std::tuple<size_t, double, double>> history;
        for (const auto& h : state.history)
          history.emplace_back(h.step, h.loss, h.eval_acc);
        return history;
      },
      py::arg("config_text") = "");
}

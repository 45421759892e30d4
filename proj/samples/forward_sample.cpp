// Builds a small model, runs one forward pass on random embeddings and
// prints the per-block gates and class probabilities.

#include <cstdio>
#include <random>

#include "darc/darc.hpp"

int main() {
  darc::ModelConfig cfg;
  cfg.d_in_img = cfg.d_in_txt = 32;
  cfg.d_map = 32;
  cfg.n_heads = 4;
  cfg.n_blocks = 2;
  cfg.n_classes = 3;
  darc::DarcModel model = darc::DarcModel::create(cfg, 7);
  darc::init_prototypes(model, std::nullopt, 7);
  std::printf("parameters: %zu\n", model.parameter_count());

  const std::size_t batch = 4;
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal;
  darc::Tensor img({batch, 1, cfg.d_in_img});
  darc::Tensor txt({batch, 1, cfg.d_in_txt});
  for (double& v : img.values()) v = normal(rng);
  for (double& v : txt.values()) v = normal(rng);

  darc::Graph g(darc::Graph::Mode::kInference);
  const darc::ForwardResult out = darc::model_forward(g, model, img, txt);
  const darc::Tensor probs = darc::ops::softmax_rows(g, out.logits);
  for (std::size_t l = 0; l < out.blocks.size(); ++l) {
    std::printf("block %zu gates:", l);
    for (double v : out.blocks[l].dfa.gate.values()) std::printf(" %.4f", v);
    std::printf("\n");
  }
  for (std::size_t i = 0; i < batch; ++i) {
    std::printf("sample %zu:", i);
    for (std::size_t c = 0; c < cfg.n_classes; ++c) std::printf(" %.4f", probs.values()[i * cfg.n_classes + c]);
    std::printf("\n");
  }
  return 0;
}

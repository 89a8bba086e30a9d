#pragma once

#include <vector>

#include "omnigf/core/nn.hpp"
#include "omnigf/model/config.hpp"
#include "omnigf/scene/scene.hpp"

namespace omnigf {

// Gaze branch: person-token extraction plus the dense heads. Person tokens
// fuse with updated vision tokens by element-wise product; two stride-2
// transposed convolutions (kernel 4, padding 1, channels D -> D/2 -> 1)
// upsample the grid 4x into a sigmoid heatmap.
template <class T>
class GazeHeads {
 public:
  GazeHeads(ParamRegistry<T>& reg, const BackboneConfig& cfg, Rng rng) : grid_(cfg.vision_grid()) {
    const int d = cfg.hidden_dim;
    up1_.init(reg, "heads.hm.up1", d, d / 2, 4, 2, 1, rng, ParamGroup::Head);
    up2_.init(reg, "heads.hm.up2", d / 2, 1, 4, 2, 1, rng, ParamGroup::Head);
    io1_.init(reg, "heads.io.fc1", d, d / 2, rng, ParamGroup::Head);
    io2_.init(reg, "heads.io.fc2", d / 2, 1, rng, ParamGroup::Head);
    so1_.init(reg, "heads.soc.fc1", 2 * d, d, rng, ParamGroup::Head);
    so2_.init(reg, "heads.soc.fc2", d, d / 2, rng, ParamGroup::Head);
    so3_.init(reg, "heads.soc.fc3", d / 2, 3, rng, ParamGroup::Head);
    fallback_ = reg.add("heads.fallback_token", randn_tensor<T>({1, d}, rng, 0.02),
                        ParamGroup::Head);
  }

  // Final-layer states at the vision rows and at each person anchor. Persons
  // whose generated block failed to parse (valid=false) get the learned
  // fallback vector so downstream heads still run.
  struct Extracted {
    Var<T> vision;         // [V, D]
    Var<T> person_tokens;  // [N, D]
  };

  Extracted extract_tokens(const Var<T>& hidden, int vision_count,
                           const std::vector<int>& anchor_rows,
                           const std::vector<bool>& valid) const {
    if (anchor_rows.size() != valid.size())
      throw std::invalid_argument("extract_tokens: anchor/valid length mismatch");
    Extracted out;
    out.vision = slice_rows(hidden, 0, vision_count);
    // Gather anchors, then substitute fallback rows for invalid persons.
    std::vector<int> rows = anchor_rows;
    std::vector<int> invalid_pos;
    for (size_t i = 0; i < valid.size(); ++i)
      if (!valid[i]) {
        rows[i] = 0;  // placeholder row; value replaced below
        invalid_pos.push_back(static_cast<int>(i));
      }
    out.person_tokens = gather_rows(hidden, rows);
    if (!invalid_pos.empty()) {
      // Tile the shared fallback parameter over the invalid rows.
      const int d = fallback_->value.dim(1);
      const int cnt = static_cast<int>(invalid_pos.size());
      Tensor<T> tiled({cnt, d});
      for (int i = 0; i < cnt; ++i)
        std::copy(fallback_->value.ptr(), fallback_->value.ptr() + d,
                  tiled.ptr() + static_cast<std::int64_t>(i) * d);
      auto tiled_var = make_var(std::move(tiled));
      if (fallback_->requires_grad) {
        tiled_var->requires_grad = true;
        tiled_var->parents = {fallback_};
        Node<T>* self = tiled_var.get();
        Node<T>* pf = fallback_.get();
        tiled_var->backward_fn = [self, pf, d, cnt]() {
          pf->ensure_grad();
          for (int i = 0; i < cnt; ++i)
            for (int j = 0; j < d; ++j) pf->grad.at(0, j) += self->grad.at(i, j);
        };
      }
      out.person_tokens = overwrite_rows(out.person_tokens, invalid_pos, tiled_var);
    }
    return out;
  }

  // Heatmap for one person: element-wise fusion, grid reshape, two upsampling
  // transposed convolutions, sigmoid. Output [4G, 4G].
  Var<T> decode_heatmap(const Var<T>& vision, const Var<T>& person_token) const {
    auto h_vec = reshape(person_token, {person_token->value.dim(1)});
    auto fused = rowwise_mul(vision, h_vec);
    auto grid = tokens_to_grid(fused, grid_);
    auto u1 = relu(up1_.forward(grid));
    auto u2 = sigmoid(up2_.forward(u1));
    const int side = u2->value.dim(1);
    return reshape(u2, {side, side});
  }

  // [N, 1] in/out logits from a 2-layer perceptron.
  Var<T> predict_inout(const Var<T>& person_tokens) const {
    return io2_.forward(relu(io1_.forward(person_tokens)));
  }

  // [P, 3] social logits (LAH, LAEO, SA) for ordered pairs; inputs are the
  // concatenated person tokens [h_i, h_j].
  Var<T> predict_social(const Var<T>& tokens_i, const Var<T>& tokens_j) const {
    auto joint = concat_cols(tokens_i, tokens_j);
    return so3_.forward(relu(so2_.forward(relu(so1_.forward(joint)))));
  }

  Var<T> fallback_token() const { return fallback_; }

 private:
  int grid_;
  ConvTranspose2dLayer<T> up1_, up2_;
  LinearLayer<T> io1_, io2_, so1_, so2_, so3_;
  Var<T> fallback_;
};

// Peak-activation decoding: argmax cell (ties: smallest row, then smallest
// column), reported at the cell center on the unit square.
template <class T>
inline Point heatmap_to_point(const Tensor<T>& map) {
  const int h = map.dim(0), w = map.dim(1);
  int br = 0, bc = 0;
  T best = map.at(0, 0);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      if (map.at(r, c) > best) {
        best = map.at(r, c);
        br = r;
        bc = c;
      }
  return {(bc + 0.5) / w, (br + 0.5) / h};
}

}  // namespace omnigf

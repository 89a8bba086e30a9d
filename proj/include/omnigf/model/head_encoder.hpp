#pragma once

#include <vector>

#include "omnigf/core/image.hpp"
#include "omnigf/core/nn.hpp"
#include "omnigf/model/backbone.hpp"
#include "omnigf/scene/scene.hpp"

namespace omnigf {

struct HeadCrop {
  Raster raster;  // head_side x head_side
  int person_index = -1;
  bool was_clamped = false;
};

// Crops the head region of person i (clamped to image bounds) and resizes it
// to the configured head side.
inline HeadCrop crop_head(const Scene& scene, int person_index, int head_side) {
  const auto& p = scene.persons.at(static_cast<size_t>(person_index));
  const Box raw = p.head_box;
  const Box b = raw.clamped(scene.width, scene.height);
  if (!b.valid()) throw std::invalid_argument("crop_head: degenerate head box after clamping");
  if (scene.image.empty()) throw std::invalid_argument("crop_head: scene raster required");

  HeadCrop crop;
  crop.person_index = person_index;
  crop.was_clamped = raw.x1 != b.x1 || raw.y1 != b.y1 || raw.x2 != b.x2 || raw.y2 != b.y2;
  crop.raster = Raster(head_side, head_side);
  const double sy = b.height() / head_side;
  const double sx = b.width() / head_side;
  for (int y = 0; y < head_side; ++y) {
    const double fy = b.y1 + (y + 0.5) * sy - 0.5;
    const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, scene.image.h - 1);
    const int y1 = std::min(y0 + 1, scene.image.h - 1);
    const double wy = std::clamp(fy - y0, 0.0, 1.0);
    for (int x = 0; x < head_side; ++x) {
      const double fx = b.x1 + (x + 0.5) * sx - 0.5;
      const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, scene.image.w - 1);
      const int x1 = std::min(x0 + 1, scene.image.w - 1);
      const double wx = std::clamp(fx - x0, 0.0, 1.0);
      for (int c = 0; c < 3; ++c) {
        const double top =
            scene.image.px(y0, x0)[c] * (1 - wx) + scene.image.px(y0, x1)[c] * wx;
        const double bot =
            scene.image.px(y1, x0)[c] * (1 - wx) + scene.image.px(y1, x1)[c] * wx;
        crop.raster.px(y, x)[c] = static_cast<float>(top * (1 - wy) + bot * wy);
      }
    }
  }
  return crop;
}

// Small convolutional head encoder: three stride-2 convs, global average
// pooling and a linear projection to the backbone width. Trained jointly from
// random init; the hue border of synthetic heads makes gaze direction
// linearly recoverable from its output.
template <class T>
class HeadEncoder {
 public:
  HeadEncoder(ParamRegistry<T>& reg, int hidden_dim, Rng rng) {
    c1_.init(reg, "head_enc.c1", 3, 16, 3, 2, 1, rng, ParamGroup::Head);
    c2_.init(reg, "head_enc.c2", 16, 32, 3, 2, 1, rng, ParamGroup::Head);
    c3_.init(reg, "head_enc.c3", 32, 64, 3, 2, 1, rng, ParamGroup::Head);
    proj_.init(reg, "head_enc.proj", 64, hidden_dim, rng, ParamGroup::Head);
  }

  // [1, D] embedding for one crop.
  Var<T> encode(const HeadCrop& crop) const {
    const int s = crop.raster.h;
    Tensor<T> chw({3, s, s});
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x)
        for (int c = 0; c < 3; ++c)
          chw.at(c, y, x) = static_cast<T>(crop.raster.px(y, x)[c]);
    auto x0 = make_var(std::move(chw));
    auto h = relu(c1_.forward(x0));
    h = relu(c2_.forward(h));
    h = relu(c3_.forward(h));
    return proj_.forward(global_avg_pool(h));
  }

  // [N, D] embeddings for all persons of a scene, in person order.
  Var<T> encode_all(const Scene& scene, int head_side) const {
    std::vector<Var<T>> rows;
    for (int i = 0; i < static_cast<int>(scene.persons.size()); ++i)
      rows.push_back(encode(crop_head(scene, i, head_side)));
    return vstack_rows(rows);
  }

 private:
  static Var<T> vstack_rows(const std::vector<Var<T>>& rows) {
    const int d = rows[0]->value.dim(1);
    Tensor<T> v({static_cast<int>(rows.size()), d});
    for (size_t i = 0; i < rows.size(); ++i)
      std::copy(rows[i]->value.ptr(), rows[i]->value.ptr() + d,
                v.ptr() + static_cast<std::int64_t>(i) * d);
    auto out = make_var(std::move(v));
    bool req = false;
    for (const auto& r : rows) req = req || r->requires_grad;
    if (req) {
      out->requires_grad = true;
      out->parents = rows;
      Node<T>* self = out.get();
      std::vector<Node<T>*> ps;
      for (const auto& r : rows) ps.push_back(r.get());
      out->backward_fn = [self, ps, d]() {
        for (size_t i = 0; i < ps.size(); ++i) {
          if (!ps[i]->requires_grad) continue;
          ps[i]->ensure_grad();
          const T* src = self->grad.ptr() + static_cast<std::int64_t>(i) * d;
          for (int j = 0; j < d; ++j) ps[i]->grad.data[j] += src[j];
        }
      };
    }
    return out;
  }

  Conv2dLayer<T> c1_, c2_, c3_;
  LinearLayer<T> proj_;
};

// Replaces the placeholder rows of an embedded sequence with per-person head
// embeddings. Pure value-level substitution: length, tags and every other row
// are untouched. The training path applies the same substitution through
// overwrite_rows so gradients reach the encoder.
template <class T>
EmbeddedSequence<T> inject(const EmbeddedSequence<T>& seq, const PromptPlan& plan,
                           const Tensor<T>& embeddings) {
  const int n = static_cast<int>(plan.gaze_pad_index.size());
  if (embeddings.dim(0) != n)
    throw std::invalid_argument("inject: embedding count != person count");
  const int d = seq.embeddings.dim(1);
  if (embeddings.dim(1) != d) throw std::invalid_argument("inject: dimension mismatch");
  EmbeddedSequence<T> out = seq;
  for (int i = 0; i < n; ++i) {
    const int row = seq.text_offset + plan.gaze_pad_index[static_cast<size_t>(i)];
    if (row < 0 || row >= seq.length() || seq.tags[static_cast<size_t>(row)] != Modality::Placeholder)
      throw std::logic_error("inject: index " + std::to_string(row) +
                             " is not tagged as a placeholder (tokenizer drift?)");
    std::copy(embeddings.ptr() + static_cast<std::int64_t>(i) * d,
              embeddings.ptr() + static_cast<std::int64_t>(i + 1) * d,
              out.embeddings.ptr() + static_cast<std::int64_t>(row) * d);
  }
  return out;
}

}  // namespace omnigf

#pragma once

#include <algorithm>
#include <concepts>
#include <string>
#include <vector>

#include "omnigf/core/image.hpp"
#include "omnigf/core/nn.hpp"
#include "omnigf/model/config.hpp"
#include "omnigf/prompt/prompt.hpp"

namespace omnigf {

enum class Modality { Vision, Text, Placeholder };

// H^(0): vision tokens followed by text embeddings, before the first
// transformer layer. Placeholder rows still hold the placeholder token
// embedding until person grounding overwrites them.
template <class T>
struct EmbeddedSequence {
  Tensor<T> embeddings;  // [L, D]
  std::vector<Modality> tags;
  int vision_count = 0;
  int text_offset = 0;  // == vision_count
  std::vector<int> placeholder_abs;  // absolute row of each <|gaze_pad|>

  int length() const { return embeddings.dim(0); }
};

// Teacher-forced output: the graph stays alive so losses and the gaze branch
// heads can backpropagate through `hidden`.
template <class T>
struct TeacherForcedResult {
  Var<T> hidden;  // [L, D] final-layer states (the exact input to the LM head)
  Var<T> logits;  // [supervised, K], rows supervised_lo .. L-1
  int supervised_lo = 0;
};

// Greedy generation output (value-level; no autodiff graph).
template <class T>
struct GenerateResult {
  Tensor<T> hidden;      // [L', D] final-layer states for prompt + generated rows
  std::vector<int> generated;  // sampled ids, EOS included when reached
  bool truncated = false;      // budget or context exhausted before EOS
  int prompt_len = 0;          // rows 0..prompt_len-1 are the prompt
};

namespace detail {

// Frozen projection plus a trainable low-rank delta:
//   y = x W + b + (alpha/r) (x A) B,  A random-init, B zero-init.
template <class T>
struct LoraProj {
  Var<T> w, b;
  Var<T> a_mat, b_mat;
  T scale = 0;
  bool enabled = true;

  Var<T> forward(const Var<T>& x) const {
    auto y = linear(x, w, b);
    if (enabled) y = add(y, omnigf::scale(matmul(matmul(x, a_mat), b_mat), scale));
    return y;
  }

  // Value-level twin of forward(); op order mirrors the graph path exactly so
  // both produce bit-identical results.
  void forward_values(const Tensor<T>& x, Tensor<T>& out) const {
    const int m = x.dim(0), k = x.dim(1), n = w->value.dim(1);
    out = Tensor<T>({m, n});
    kern::matmul_acc(x.ptr(), m, k, w->value.ptr(), n, out.ptr());
    kern::add_bias_rows(out.ptr(), m, n, b->value.ptr());
    if (enabled) {
      const int r = a_mat->value.dim(1);
      Tensor<T> t1({m, r});
      kern::matmul_acc(x.ptr(), m, k, a_mat->value.ptr(), r, t1.ptr());
      Tensor<T> t2({m, n});
      kern::matmul_acc(t1.ptr(), m, r, b_mat->value.ptr(), n, t2.ptr());
      for (std::int64_t i = 0; i < t2.size(); ++i) t2.data[i] *= scale;
      for (std::int64_t i = 0; i < out.size(); ++i) out.data[i] += t2.data[i];
    }
  }
};

template <class T>
struct Block {
  LayerNormLayer<T> ln1, ln2;
  LoraProj<T> q, k, v, o;
  LinearLayer<T> mlp1, mlp2;
};

}  // namespace detail

// A tiny causal multimodal transformer: patchified vision tokens and
// byte-level text share one decoder stack. Base weights are frozen at their
// seeded initialization; only the low-rank adapter pairs train. A
// production-scale pretrained model can stand in for this class behind the
// MultimodalBackbone concept below.
template <class T>
class TinyBackbone {
 public:
  explicit TinyBackbone(const BackboneConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(cfg_.init_seed);
    const int d = cfg_.hidden_dim;
    const int ff = d * cfg_.ffn_mult;
    const double res_scale = 0.02 / std::sqrt(2.0 * cfg_.num_layers);

    token_emb_ = reg_.add("emb.token", randn_tensor<T>({cfg_.vocab_size, d}, rng, 0.02),
                          ParamGroup::Base);
    pos_emb_ = reg_.add("emb.pos", randn_tensor<T>({cfg_.max_context, d}, rng, 0.02),
                        ParamGroup::Base);
    const int pdim = cfg_.patch * cfg_.patch * 3;
    vis_w_ = reg_.add("vis.proj.w", randn_tensor<T>({pdim, d}, rng, 1.0 / std::sqrt(pdim)),
                      ParamGroup::Base);
    vis_b_ = reg_.add("vis.proj.b", Tensor<T>({d}), ParamGroup::Base);

    blocks_.resize(static_cast<size_t>(cfg_.num_layers));
    for (int l = 0; l < cfg_.num_layers; ++l) {
      auto& blk = blocks_[static_cast<size_t>(l)];
      const std::string p = "layer" + std::to_string(l) + ".";
      blk.ln1.init(reg_, p + "ln1", d, ParamGroup::Base);
      blk.ln2.init(reg_, p + "ln2", d, ParamGroup::Base);
      auto init_proj = [&](detail::LoraProj<T>& pr, const std::string& name, double wstd) {
        pr.w = reg_.add(p + "attn." + name + ".w", randn_tensor<T>({d, d}, rng, wstd),
                        ParamGroup::Base);
        pr.b = reg_.add(p + "attn." + name + ".b", Tensor<T>({d}), ParamGroup::Base);
        pr.a_mat = reg_.add(p + "attn." + name + ".lora_a",
                            randn_tensor<T>({d, cfg_.lora_rank}, rng, 0.02), ParamGroup::Adapter);
        pr.b_mat = reg_.add(p + "attn." + name + ".lora_b", Tensor<T>({cfg_.lora_rank, d}),
                            ParamGroup::Adapter);
        pr.scale = static_cast<T>(cfg_.lora_alpha / cfg_.lora_rank);
      };
      init_proj(blk.q, "q", 0.02);
      init_proj(blk.k, "k", 0.02);
      init_proj(blk.v, "v", 0.02);
      init_proj(blk.o, "o", res_scale);
      blk.mlp1.init(reg_, p + "mlp.fc1", d, ff, rng, ParamGroup::Base, 1.0 / std::sqrt(d));
      blk.mlp2.init(reg_, p + "mlp.fc2", ff, d, rng, ParamGroup::Base, res_scale);
    }
    ln_f_.init(reg_, "ln_f", d, ParamGroup::Base);
    lm_w_ = reg_.add("lm_head.w", randn_tensor<T>({d, cfg_.vocab_size}, rng, 1.0 / std::sqrt(d)),
                     ParamGroup::Base);
    lm_b_ = reg_.add("lm_head.b", Tensor<T>({cfg_.vocab_size}), ParamGroup::Base);
  }

  const BackboneConfig& config() const { return cfg_; }
  ParamRegistry<T>& registry() { return reg_; }
  const ParamRegistry<T>& registry() const { return reg_; }

  // Toggle the low-rank adapter path (the base forward is exactly recovered
  // at initialization since every B factor starts at zero).
  void set_adapters_enabled(bool on) {
    for (auto& blk : blocks_) {
      blk.q.enabled = on;
      blk.k.enabled = on;
      blk.v.enabled = on;
      blk.o.enabled = on;
    }
  }
  bool adapters_enabled() const { return blocks_.empty() ? true : blocks_[0].q.enabled; }

  // ---- embedding ----

  EmbeddedSequence<T> embed(const Raster& image, const std::vector<int>& text_ids) const {
    if (image.empty()) throw std::invalid_argument("embed: scene raster required");
    const int d = cfg_.hidden_dim;
    const int g = cfg_.vision_grid();
    const int v = cfg_.vision_tokens();
    const int len = v + static_cast<int>(text_ids.size());
    if (len > cfg_.max_context)
      throw std::invalid_argument("embed: sequence length " + std::to_string(len) +
                                  " exceeds context limit " + std::to_string(cfg_.max_context));

    Raster resized = (image.h == cfg_.scene_side && image.w == cfg_.scene_side)
                         ? image
                         : resize_bilinear(image, cfg_.scene_side, cfg_.scene_side);

    EmbeddedSequence<T> seq;
    seq.vision_count = v;
    seq.text_offset = v;
    seq.embeddings = Tensor<T>({len, d});
    seq.tags.assign(static_cast<size_t>(len), Modality::Text);

    // Patchify: row-major patches, each flattened as (y, x, channel).
    const int p = cfg_.patch;
    Tensor<T> patches({v, p * p * 3});
    for (int py = 0; py < g; ++py)
      for (int px = 0; px < g; ++px) {
        T* row = patches.ptr() + static_cast<std::int64_t>(py * g + px) * p * p * 3;
        for (int y = 0; y < p; ++y)
          for (int x = 0; x < p; ++x) {
            const float* src = resized.px(py * p + y, px * p + x);
            row[(y * p + x) * 3 + 0] = static_cast<T>(src[0]);
            row[(y * p + x) * 3 + 1] = static_cast<T>(src[1]);
            row[(y * p + x) * 3 + 2] = static_cast<T>(src[2]);
          }
      }
    kern::matmul_acc(patches.ptr(), v, p * p * 3, vis_w_->value.ptr(), d, seq.embeddings.ptr());
    kern::add_bias_rows(seq.embeddings.ptr(), v, d, vis_b_->value.ptr());
    for (int i = 0; i < v; ++i) {
      seq.tags[static_cast<size_t>(i)] = Modality::Vision;
      kern::axpy(T(1), pos_emb_->value.ptr() + static_cast<std::int64_t>(i) * d,
                 seq.embeddings.ptr() + static_cast<std::int64_t>(i) * d, d);
    }
    for (size_t t = 0; t < text_ids.size(); ++t) {
      const int id = text_ids[t];
      if (id < 0 || id >= cfg_.vocab_size) throw std::out_of_range("embed: token id out of vocab");
      const int row = v + static_cast<int>(t);
      T* dst = seq.embeddings.ptr() + static_cast<std::int64_t>(row) * d;
      const T* emb = token_emb_->value.ptr() + static_cast<std::int64_t>(id) * d;
      for (int j = 0; j < d; ++j) dst[j] = emb[j];
      kern::axpy(T(1), pos_emb_->value.ptr() + static_cast<std::int64_t>(row) * d, dst, d);
      if (id == Tokenizer::kGazePadId) {
        seq.tags[static_cast<size_t>(row)] = Modality::Placeholder;
        seq.placeholder_abs.push_back(row);
      }
    }
    return seq;
  }

  // ---- teacher-forced graph forward ----

  // x0: [L, D] injected sequence. Logits cover rows [supervised_lo, L): the
  // positions whose next-token predictions are supervised.
  TeacherForcedResult<T> forward_teacher_forced(const Var<T>& x0, int supervised_lo,
                                                int expected_supervised) const {
    const int len = x0->value.dim(0);
    if (supervised_lo < 0 || supervised_lo >= len)
      throw std::invalid_argument("teacher_forced: supervised_lo out of range");
    if (len - supervised_lo != expected_supervised)
      throw std::invalid_argument("teacher_forced: target length mismatch (have " +
                                  std::to_string(len - supervised_lo) + ", expected " +
                                  std::to_string(expected_supervised) + ")");
    Var<T> x = x0;
    for (const auto& blk : blocks_) {
      auto a = blk.ln1.forward(x);
      auto attn = causal_attention(rope(blk.q.forward(a), cfg_.num_heads),
                                   rope(blk.k.forward(a), cfg_.num_heads), blk.v.forward(a),
                                   cfg_.num_heads);
      x = add(x, blk.o.forward(attn));
      auto m = blk.ln2.forward(x);
      x = add(x, blk.mlp2.forward(gelu(blk.mlp1.forward(m))));
    }
    TeacherForcedResult<T> out;
    out.hidden = ln_f_.forward(x);
    out.logits = linear(slice_rows(out.hidden, supervised_lo, len), lm_w_, lm_b_);
    out.supervised_lo = supervised_lo;
    return out;
  }

  // ---- incremental inference ----

  struct KvCache {
    std::vector<Tensor<T>> k, v;  // per layer, [cap, D]
    int rows = 0;
  };

  KvCache make_cache(int capacity) const {
    KvCache c;
    c.k.resize(static_cast<size_t>(cfg_.num_layers));
    c.v.resize(static_cast<size_t>(cfg_.num_layers));
    for (int l = 0; l < cfg_.num_layers; ++l) {
      c.k[static_cast<size_t>(l)] = Tensor<T>({capacity, cfg_.hidden_dim});
      c.v[static_cast<size_t>(l)] = Tensor<T>({capacity, cfg_.hidden_dim});
    }
    return c;
  }

  // Runs rows [cache.rows, cache.rows+m) through the stack, appending to the
  // cache. Returns the final-layer states for the block. Mirrors the graph
  // ops kernel-for-kernel, so values match forward_teacher_forced bitwise.
  Tensor<T> forward_rows(const Tensor<T>& x_block, KvCache& cache) const {
    const int m = x_block.dim(0), d = cfg_.hidden_dim;
    const int start = cache.rows;
    const int dh = d / cfg_.num_heads;
    Tensor<T> x = x_block;
    std::vector<T> scratch(static_cast<size_t>(start + m));
    for (size_t l = 0; l < blocks_.size(); ++l) {
      const auto& blk = blocks_[l];
      Tensor<T> a({m, d});
      for (int i = 0; i < m; ++i)
        kern::layer_norm_row(x.ptr() + static_cast<std::int64_t>(i) * d, d,
                             blk.ln1.gamma->value.ptr(), blk.ln1.beta->value.ptr(), T(1e-5),
                             a.ptr() + static_cast<std::int64_t>(i) * d);
      Tensor<T> qb, kb, vb;
      blk.q.forward_values(a, qb);
      blk.k.forward_values(a, kb);
      blk.v.forward_values(a, vb);
      // rotary position embedding at absolute positions (keys cached rotated)
      for (int i = 0; i < m; ++i) {
        kern::rope_row(qb.ptr() + static_cast<std::int64_t>(i) * d, start + i, cfg_.num_heads, dh,
                       qb.ptr() + static_cast<std::int64_t>(i) * d);
        kern::rope_row(kb.ptr() + static_cast<std::int64_t>(i) * d, start + i, cfg_.num_heads, dh,
                       kb.ptr() + static_cast<std::int64_t>(i) * d);
      }
      Tensor<T>& kc = cache.k[l];
      Tensor<T>& vc = cache.v[l];
      std::copy(kb.ptr(), kb.ptr() + kb.size(), kc.ptr() + static_cast<std::int64_t>(start) * d);
      std::copy(vb.ptr(), vb.ptr() + vb.size(), vc.ptr() + static_cast<std::int64_t>(start) * d);
      Tensor<T> attn({m, d});
      for (int i = 0; i < m; ++i)
        kern::attn_row(qb.ptr() + static_cast<std::int64_t>(i) * d, kc.ptr(), vc.ptr(),
                       start + i + 1, cfg_.num_heads, dh,
                       attn.ptr() + static_cast<std::int64_t>(i) * d, static_cast<T*>(nullptr), 0,
                       scratch.data());
      Tensor<T> attn_o;
      blk.o.forward_values(attn, attn_o);
      for (std::int64_t i = 0; i < x.size(); ++i) x.data[i] += attn_o.data[i];
      Tensor<T> mm({m, d});
      for (int i = 0; i < m; ++i)
        kern::layer_norm_row(x.ptr() + static_cast<std::int64_t>(i) * d, d,
                             blk.ln2.gamma->value.ptr(), blk.ln2.beta->value.ptr(), T(1e-5),
                             mm.ptr() + static_cast<std::int64_t>(i) * d);
      const int ff = blk.mlp1.w->value.dim(1);
      Tensor<T> h1({m, ff});
      kern::matmul_acc(mm.ptr(), m, d, blk.mlp1.w->value.ptr(), ff, h1.ptr());
      kern::add_bias_rows(h1.ptr(), m, ff, blk.mlp1.b->value.ptr());
      for (auto& vv : h1.data) vv = kern::gelu_scalar(vv);
      Tensor<T> h2({m, d});
      kern::matmul_acc(h1.ptr(), m, ff, blk.mlp2.w->value.ptr(), d, h2.ptr());
      kern::add_bias_rows(h2.ptr(), m, d, blk.mlp2.b->value.ptr());
      for (std::int64_t i = 0; i < x.size(); ++i) x.data[i] += h2.data[i];
    }
    cache.rows = start + m;
    Tensor<T> hidden({m, d});
    for (int i = 0; i < m; ++i)
      kern::layer_norm_row(x.ptr() + static_cast<std::int64_t>(i) * d, d, ln_f_.gamma->value.ptr(),
                           ln_f_.beta->value.ptr(), T(1e-5),
                           hidden.ptr() + static_cast<std::int64_t>(i) * d);
    return hidden;
  }

  // Greedy decoding with a KV cache. Final-layer states are returned for
  // every processed position (prompt and generated) so the gaze branch can
  // read anchors off the same pass.
  GenerateResult<T> generate(const EmbeddedSequence<T>& seq, int max_new_tokens) const {
    const int d = cfg_.hidden_dim;
    const int len = seq.length();
    GenerateResult<T> out;
    out.prompt_len = len;
    const int cap = std::min(cfg_.max_context, len + max_new_tokens + 1);
    KvCache cache = make_cache(cap);
    std::vector<Tensor<T>> rows;
    rows.push_back(forward_rows(seq.embeddings, cache));
    int produced = 0;
    bool saw_eos = false;
    const T* last_hidden = rows.back().ptr() + static_cast<std::int64_t>(len - 1) * d;
    Tensor<T> logits({1, cfg_.vocab_size});
    while (produced < max_new_tokens) {
      logits.fill(T(0));
      kern::matmul_acc(last_hidden, 1, d, lm_w_->value.ptr(), cfg_.vocab_size, logits.ptr());
      kern::add_bias_rows(logits.ptr(), 1, cfg_.vocab_size, lm_b_->value.ptr());
      int best = 0;
      for (int j = 1; j < cfg_.vocab_size; ++j)
        if (logits.at(0, j) > logits.at(0, best)) best = j;
      out.generated.push_back(best);
      ++produced;
      if (best == Tokenizer::kEosId) {
        saw_eos = true;
        break;
      }
      if (cache.rows + 1 > cap) break;  // context exhausted
      Tensor<T> emb({1, d});
      const T* te = token_emb_->value.ptr() + static_cast<std::int64_t>(best) * d;
      const T* pe = pos_emb_->value.ptr() + static_cast<std::int64_t>(cache.rows) * d;
      for (int j = 0; j < d; ++j) emb.at(0, j) = te[j] + pe[j];
      rows.push_back(forward_rows(emb, cache));
      last_hidden = rows.back().ptr();
    }
    out.truncated = !saw_eos;
    out.hidden = Tensor<T>({cache.rows, d});
    std::int64_t off = 0;
    for (const auto& r : rows) {
      std::copy(r.ptr(), r.ptr() + r.size(), out.hidden.ptr() + off);
      off += r.size();
    }
    return out;
  }

  Var<T> lm_head_w() const { return lm_w_; }
  Var<T> lm_head_b() const { return lm_b_; }

 private:
  BackboneConfig cfg_;
  ParamRegistry<T> reg_;
  Var<T> token_emb_, pos_emb_, vis_w_, vis_b_, lm_w_, lm_b_;
  std::vector<detail::Block<T>> blocks_;
  LayerNormLayer<T> ln_f_;
};

// Shim contract for substituting a pretrained multimodal model. Exactly four
// capabilities may be assumed: token embedding access (embed), the
// placeholder overwrite hook (EmbeddedSequence rows), final-layer state
// access, and the generation hook.
template <class B, class T>
concept MultimodalBackbone = requires(const B& b, const Raster& img, std::vector<int> ids,
                                      const Var<T>& x, const EmbeddedSequence<T>& seq) {
  { b.embed(img, ids) } -> std::same_as<EmbeddedSequence<T>>;
  { b.forward_teacher_forced(x, 0, 0) } -> std::same_as<TeacherForcedResult<T>>;
  { b.generate(seq, 1) } -> std::same_as<GenerateResult<T>>;
  { b.config() } -> std::convertible_to<const BackboneConfig&>;
};

static_assert(MultimodalBackbone<TinyBackbone<float>, float>);
static_assert(MultimodalBackbone<TinyBackbone<double>, double>);

}  // namespace omnigf

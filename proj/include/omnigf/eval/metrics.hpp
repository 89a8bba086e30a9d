#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "omnigf/prompt/system_prompts.hpp"
#include "omnigf/scene/scene.hpp"

namespace omnigf {

// ---- spatial metrics ----

struct DistancePair {
  double avg = 0, min = 0;
};

// Euclidean distances from the prediction to every annotator point on the
// unit square; reports mean and minimum.
inline DistancePair l2_distances(Point pred, const std::vector<Point>& gts) {
  if (gts.empty()) throw std::invalid_argument("l2_distances: empty ground truth list");
  double sum = 0, mn = std::numeric_limits<double>::infinity();
  for (const auto& g : gts) {
    const double d = std::hypot(pred.x - g.x, pred.y - g.y);
    sum += d;
    mn = std::min(mn, d);
  }
  return {sum / static_cast<double>(gts.size()), mn};
}

// 1 iff the point falls within the box, boundaries inclusive.
inline int gaze_acc(Point pred, const Box& obj_box_norm) {
  return (pred.x >= obj_box_norm.x1 && pred.x <= obj_box_norm.x2 && pred.y >= obj_box_norm.y1 &&
          pred.y <= obj_box_norm.y2)
             ? 1
             : 0;
}

// ---- ranking metrics ----

// AP = sum_k (R_k - R_{k-1}) * P_k over descending-score ranks (the
// interpolation-free step form). Ties keep stable input order. Returns
// nothing when no positive labels exist (AP undefined).
inline std::optional<double> average_precision(const std::vector<double>& scores,
                                               const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("ap: length mismatch");
  int npos = 0;
  for (int l : labels) npos += l ? 1 : 0;
  if (npos == 0) return std::nullopt;
  std::vector<size_t> order(scores.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return scores[a] > scores[b]; });
  double ap = 0;
  int tp = 0;
  for (size_t rank = 0; rank < order.size(); ++rank) {
    if (labels[order[rank]]) {
      ++tp;
      ap += static_cast<double>(tp) / static_cast<double>(rank + 1);
    }
  }
  return ap / npos;
}

// Binarize at the threshold (score > threshold is positive); F1 = 2PR/(P+R),
// defined as 0 when P+R = 0.
inline double f1_at_threshold(const std::vector<double>& scores, const std::vector<int>& labels,
                              double threshold = 0.5) {
  if (scores.size() != labels.size()) throw std::invalid_argument("f1: length mismatch");
  int tp = 0, fp = 0, fn = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] > threshold;
    if (pred && labels[i]) ++tp;
    if (pred && !labels[i]) ++fp;
    if (!pred && labels[i]) ++fn;
  }
  if (tp == 0) return 0.0;
  const double p = static_cast<double>(tp) / (tp + fp);
  const double r = static_cast<double>(tp) / (tp + fn);
  if (p + r == 0.0) return 0.0;
  return 2.0 * p * r / (p + r);
}

// ---- semantic matching ----

// Pluggable text embedder. Production deployments slot in an external
// encoder using the template "a photo of [label]"; the reference
// implementation is a deterministic character-n-gram hashing embedder.
class TextEmbedder {
 public:
  virtual ~TextEmbedder() = default;
  // Unit-norm vector; identical text must give identical vectors. Empty or
  // unembeddable text returns the zero vector.
  virtual std::vector<double> embed(const std::string& text) const = 0;
};

class CharNgramEmbedder : public TextEmbedder {
 public:
  explicit CharNgramEmbedder(int buckets = 256) : buckets_(buckets) {}

  std::vector<double> embed(const std::string& text) const override {
    std::vector<double> v(static_cast<size_t>(buckets_), 0.0);
    std::string s;
    for (char c : text)
      if (!std::isspace(static_cast<unsigned char>(c)))
        s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    if (s.empty()) return v;
    for (int n = 1; n <= 3; ++n)
      for (size_t i = 0; i + n <= s.size(); ++i) {
        const std::uint64_t h = fnv1a64(s.data() + i, static_cast<size_t>(n),
                                        0xcbf29ce484222325ULL ^ static_cast<std::uint64_t>(n));
        v[h % static_cast<std::uint64_t>(buckets_)] += 1.0;
      }
    double norm = 0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 0)
      for (double& x : v) x /= norm;
    return v;
  }

 private:
  int buckets_;
};

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// Closest vocabulary class by cosine similarity; exact string match
// short-circuits. Argmax ties break lexicographically, which makes the
// result invariant to vocabulary order. Empty prediction matches nothing.
inline std::string semantic_match(const std::string& pred,
                                  const std::vector<std::string>& vocabulary,
                                  const TextEmbedder& embedder) {
  if (vocabulary.empty()) throw std::invalid_argument("semantic_match: empty vocabulary");
  if (pred.empty()) return "";
  for (const auto& c : vocabulary)
    if (c == pred) return c;
  const auto pe = embedder.embed(pred);
  std::string best;
  double best_sim = -std::numeric_limits<double>::infinity();
  for (const auto& c : vocabulary) {
    const double sim = cosine(pe, embedder.embed(c));
    if (sim > best_sim || (sim == best_sim && c < best)) {
      best_sim = sim;
      best = c;
    }
  }
  return best;
}

}  // namespace omnigf

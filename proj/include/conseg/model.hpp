#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "conseg/mat.hpp"
#include "conseg/types.hpp"

namespace conseg {

// One cross-attention decoder block: query/key/value projections followed
// by a residual per-query two-layer feed-forward (tanh hidden). Queries
// never attend to each other, so each query row depends only on its own
// previous row and the pixel features.
struct AttentionBlock {
  Mat w_query, w_key, w_value;  // d×d
  Mat ff1, ff2;                 // d×d, d×d
};

// Toy mask-classification network. The classifier has one column per seen
// foreground class, in head_classes order, plus a trailing no-object
// column.
struct ModelState {
  std::size_t dim = 0;        // embedding width
  std::size_t n_queries = 0;  // learned query count
  std::size_t h = 0, w = 0;   // expected input grid

  Mat queries;  // n_queries×dim, the layer-0 query features
  std::vector<AttentionBlock> blocks;
  Mat pixel_head;  // d×d, per-pixel linear embedding
  Mat mask_head;   // d×d
  Mat classifier;  // d×(K+1), last column = no object
  std::vector<ClassId> head_classes;

  std::size_t n_layers() const { return blocks.size(); }
  std::size_t n_classes() const { return head_classes.size(); }
  std::size_t no_object_column() const { return head_classes.size(); }
  // Column of a foreground class in the classifier; throws on unknown id.
  std::size_t column_of(std::uint32_t class_id) const;
};

ModelState init_model(std::size_t dim, std::size_t n_queries, std::size_t n_layers,
                      std::size_t h, std::size_t w, const std::vector<ClassId>& classes,
                      double init_scale, std::uint64_t seed);

// Grows the classifier: existing columns (and the trailing no-object
// column) are copied bit-exactly, new class columns are seeded uniform in
// [-init_scale, init_scale] and appended before the no-object column.
ModelState extend_classifier(const ModelState& model, const std::vector<ClassId>& new_classes,
                             double init_scale, std::uint64_t seed);

// Deep immutable copy of the parameters (value semantics make this a plain
// copy; the name marks the freeze point in training code).
ModelState snapshot(const ModelState& model);

struct LayerTrace {
  Mat keys, values;  // P×d projections of the input features
  Mat attention;     // n_queries×P softmax weights
  Mat pre_ff;        // n_queries×d, residual + attention context
  Mat ff_hidden;     // n_queries×d, tanh(pre_ff·ff1)
  Mat out;           // n_queries×d, the layer's query features
};

// Everything forward() computed, cached for the exact backward pass.
struct ForwardTrace {
  std::size_t n_queries = 0, dim = 0, n_pixels = 0, n_classes = 0;
  std::size_t h = 0, w = 0;
  std::vector<ClassId> head_classes;

  Mat input;      // P×d flattened feature grid
  Mat pixel_emb;  // P×d
  std::vector<LayerTrace> layers;
  Mat class_logits;  // n_queries×(K+1)
  Mat prob;          // n_queries×(K+1), row softmax
  Mat mask_emb;      // n_queries×d
  Mat mask_logits;   // n_queries×P
  Mat mask;          // n_queries×P, sigmoid of logits

  // Query features after layer s, s in 1..S.
  const Mat& query_features(std::size_t s) const { return layers[s - 1].out; }
  std::size_t no_object_column() const { return n_classes; }
  std::size_t column_of(std::uint32_t class_id) const;
};

// Single decoder block on explicit inputs; exposed for direct testing.
LayerTrace run_attention_block(const Mat& f_prev, const Mat& f_b, const AttentionBlock& w);
Mat attention_layer(const Mat& f_prev, const Mat& f_b, const AttentionBlock& w);

ForwardTrace forward(const ModelState& model, const Sample& sample);
ForwardTrace forward(const ModelState& model, const Mat& features);  // P×d

// Upstream gradients w.r.t. trace outputs. Empty members mean zero.
struct TraceGrads {
  Mat d_prob;  // n_queries×(K+1), w.r.t. softmax probabilities
  Mat d_mask;  // n_queries×P, w.r.t. sigmoid mask values
  std::vector<Mat> d_query_features;  // per layer s=1..S, n_queries×d

  void ensure_shapes(const ForwardTrace& trace);
  void accumulate(const TraceGrads& other, double scale);
};

struct ModelGrads {
  Mat queries;
  std::vector<AttentionBlock> blocks;
  Mat pixel_head, mask_head, classifier;
};

ModelGrads zeros_like(const ModelState& model);
void accumulate(ModelGrads& into, const ModelGrads& from, double scale);
// θ ← θ − lr·g
void apply_gradient_step(ModelState& model, const ModelGrads& grads, double lr);
double max_abs(const ModelGrads& grads);

struct BackwardResult {
  ModelGrads params;
  std::vector<Mat> feature_grads;  // dL/d f_s for s=1..S (index s-1)
};

// Exact reverse-mode gradients for every parameter and every per-layer
// query feature, given upstream gradients on the trace outputs.
BackwardResult backward(const ModelState& model, const ForwardTrace& trace,
                        const TraceGrads& grads);

struct PredictedSegment {
  Segment segment;
  std::size_t query = 0;
  double confidence = 0.0;  // class probability at the argmax
};

// Emits one segment per query whose argmax over all K+1 columns is a
// foreground class; masks binarized at the threshold, empty results
// dropped.
std::vector<PredictedSegment> predict_segments(const ForwardTrace& trace, double mask_threshold);

// Checkpoint: shape header + flat f64 parameter array; round-trips
// bit-exactly.
void save_model(const ModelState& model, const std::filesystem::path& path);
ModelState load_model(const std::filesystem::path& path);

}  // namespace conseg

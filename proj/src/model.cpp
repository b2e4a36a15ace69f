#include "conseg/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>

#include "conseg/rng.hpp"

namespace conseg {

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void fill_uniform(Mat& m, Rng& rng, double scale) {
  for (double& v : m.data()) v = rng.uniform(-scale, scale);
}

Mat features_as_matrix(const Sample& sample) {
  Mat f(sample.h * sample.w, sample.dim);
  std::copy(sample.features.begin(), sample.features.end(), f.data().begin());
  return f;
}

}  // namespace

std::size_t ModelState::column_of(std::uint32_t class_id) const {
  for (std::size_t j = 0; j < head_classes.size(); ++j) {
    if (head_classes[j].id == class_id) return j;
  }
  throw ConfigError("class id " + std::to_string(class_id) + " not in classifier head");
}

std::size_t ForwardTrace::column_of(std::uint32_t class_id) const {
  for (std::size_t j = 0; j < head_classes.size(); ++j) {
    if (head_classes[j].id == class_id) return j;
  }
  throw ConfigError("class id " + std::to_string(class_id) + " not in classifier head");
}

ModelState init_model(std::size_t dim, std::size_t n_queries, std::size_t n_layers,
                      std::size_t h, std::size_t w, const std::vector<ClassId>& classes,
                      double init_scale, std::uint64_t seed) {
  ModelState m;
  m.dim = dim;
  m.n_queries = n_queries;
  m.h = h;
  m.w = w;
  m.head_classes = classes;
  Rng rng(seed);
  m.queries = Mat(n_queries, dim);
  fill_uniform(m.queries, rng, init_scale);
  for (std::size_t s = 0; s < n_layers; ++s) {
    AttentionBlock b;
    b.w_query = Mat(dim, dim);
    b.w_key = Mat(dim, dim);
    b.w_value = Mat(dim, dim);
    b.ff1 = Mat(dim, dim);
    b.ff2 = Mat(dim, dim);
    fill_uniform(b.w_query, rng, init_scale);
    fill_uniform(b.w_key, rng, init_scale);
    fill_uniform(b.w_value, rng, init_scale);
    fill_uniform(b.ff1, rng, init_scale);
    fill_uniform(b.ff2, rng, init_scale);
    m.blocks.push_back(std::move(b));
  }
  m.pixel_head = Mat(dim, dim);
  m.mask_head = Mat(dim, dim);
  m.classifier = Mat(dim, classes.size() + 1);
  fill_uniform(m.pixel_head, rng, init_scale);
  fill_uniform(m.mask_head, rng, init_scale);
  fill_uniform(m.classifier, rng, init_scale);
  return m;
}

ModelState extend_classifier(const ModelState& model, const std::vector<ClassId>& new_classes,
                             double init_scale, std::uint64_t seed) {
  for (const ClassId& c : new_classes) {
    for (const ClassId& old : model.head_classes) {
      if (old.id == c.id) {
        throw ConfigError("extend_classifier: class " + std::to_string(c.id) +
                          " already present");
      }
    }
  }
  if (new_classes.empty()) return model;

  std::vector<ClassId> added = new_classes;
  std::sort(added.begin(), added.end());

  ModelState out = model;
  const std::size_t old_k = model.n_classes();
  const std::size_t new_k = old_k + added.size();
  Mat cls(model.dim, new_k + 1);
  for (std::size_t r = 0; r < model.dim; ++r) {
    for (std::size_t j = 0; j < old_k; ++j) cls(r, j) = model.classifier(r, j);
    cls(r, new_k) = model.classifier(r, old_k);  // no-object column stays last
  }
  Rng rng(seed);
  for (std::size_t j = old_k; j < new_k; ++j) {
    for (std::size_t r = 0; r < model.dim; ++r) cls(r, j) = rng.uniform(-init_scale, init_scale);
  }
  out.classifier = std::move(cls);
  out.head_classes.insert(out.head_classes.end(), added.begin(), added.end());
  return out;
}

ModelState snapshot(const ModelState& model) { return model; }

LayerTrace run_attention_block(const Mat& f_prev, const Mat& f_b, const AttentionBlock& w) {
  if (f_prev.cols() != w.w_query.rows() || f_b.cols() != w.w_key.rows()) {
    throw ConfigError("attention block: shape mismatch");
  }
  LayerTrace t;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(f_prev.cols()));
  const Mat q = mul(f_prev, w.w_query);
  t.keys = mul(f_b, w.w_key);
  t.values = mul(f_b, w.w_value);
  t.attention = mul_nt(q, t.keys);
  scale(t.attention, inv_sqrt_d);
  softmax_rows(t.attention);
  t.pre_ff = mul(t.attention, t.values);
  axpy(1.0, f_prev, t.pre_ff);
  t.ff_hidden = mul(t.pre_ff, w.ff1);
  for (double& v : t.ff_hidden.data()) v = std::tanh(v);
  t.out = mul(t.ff_hidden, w.ff2);
  axpy(1.0, t.pre_ff, t.out);
  return t;
}

Mat attention_layer(const Mat& f_prev, const Mat& f_b, const AttentionBlock& w) {
  return run_attention_block(f_prev, f_b, w).out;
}

ForwardTrace forward(const ModelState& model, const Mat& features) {
  if (features.cols() != model.dim) throw ConfigError("forward: feature width != model dim");
  if (features.rows() != model.h * model.w) {
    throw ConfigError("forward: pixel count does not match the model's grid");
  }
  ForwardTrace trace;
  trace.n_queries = model.n_queries;
  trace.dim = model.dim;
  trace.n_pixels = features.rows();
  trace.n_classes = model.n_classes();
  trace.h = model.h;
  trace.w = model.w;
  trace.head_classes = model.head_classes;
  trace.input = features;
  trace.pixel_emb = mul(features, model.pixel_head);

  const Mat* f = &model.queries;
  for (const AttentionBlock& block : model.blocks) {
    trace.layers.push_back(run_attention_block(*f, features, block));
    f = &trace.layers.back().out;
  }

  trace.class_logits = mul(*f, model.classifier);
  trace.prob = trace.class_logits;
  softmax_rows(trace.prob);
  trace.mask_emb = mul(*f, model.mask_head);
  trace.mask_logits = mul_nt(trace.mask_emb, trace.pixel_emb);
  trace.mask = trace.mask_logits;
  for (double& v : trace.mask.data()) v = stable_sigmoid(v);

  if (!all_finite(trace.prob) || !all_finite(trace.mask)) {
    throw NumericError("forward: non-finite activations");
  }
  return trace;
}

ForwardTrace forward(const ModelState& model, const Sample& sample) {
  if (sample.dim != model.dim || sample.h != model.h || sample.w != model.w) {
    throw ConfigError("forward: sample grid does not match model");
  }
  return forward(model, features_as_matrix(sample));
}

void TraceGrads::ensure_shapes(const ForwardTrace& trace) {
  if (d_prob.empty()) d_prob = Mat(trace.n_queries, trace.n_classes + 1);
  if (d_mask.empty()) d_mask = Mat(trace.n_queries, trace.n_pixels);
  if (d_query_features.empty()) {
    d_query_features.assign(trace.layers.size(), Mat(trace.n_queries, trace.dim));
  }
}

void TraceGrads::accumulate(const TraceGrads& other, double scale_factor) {
  if (!other.d_prob.empty()) {
    if (d_prob.empty()) d_prob = Mat(other.d_prob.rows(), other.d_prob.cols());
    axpy(scale_factor, other.d_prob, d_prob);
  }
  if (!other.d_mask.empty()) {
    if (d_mask.empty()) d_mask = Mat(other.d_mask.rows(), other.d_mask.cols());
    axpy(scale_factor, other.d_mask, d_mask);
  }
  if (!other.d_query_features.empty()) {
    if (d_query_features.empty()) {
      for (const Mat& m : other.d_query_features) d_query_features.emplace_back(m.rows(), m.cols());
    }
    for (std::size_t s = 0; s < other.d_query_features.size(); ++s) {
      axpy(scale_factor, other.d_query_features[s], d_query_features[s]);
    }
  }
}

ModelGrads zeros_like(const ModelState& model) {
  ModelGrads g;
  g.queries = Mat(model.queries.rows(), model.queries.cols());
  for (const AttentionBlock& b : model.blocks) {
    AttentionBlock z;
    z.w_query = Mat(b.w_query.rows(), b.w_query.cols());
    z.w_key = Mat(b.w_key.rows(), b.w_key.cols());
    z.w_value = Mat(b.w_value.rows(), b.w_value.cols());
    z.ff1 = Mat(b.ff1.rows(), b.ff1.cols());
    z.ff2 = Mat(b.ff2.rows(), b.ff2.cols());
    g.blocks.push_back(std::move(z));
  }
  g.pixel_head = Mat(model.pixel_head.rows(), model.pixel_head.cols());
  g.mask_head = Mat(model.mask_head.rows(), model.mask_head.cols());
  g.classifier = Mat(model.classifier.rows(), model.classifier.cols());
  return g;
}

void accumulate(ModelGrads& into, const ModelGrads& from, double scale_factor) {
  axpy(scale_factor, from.queries, into.queries);
  for (std::size_t s = 0; s < into.blocks.size(); ++s) {
    axpy(scale_factor, from.blocks[s].w_query, into.blocks[s].w_query);
    axpy(scale_factor, from.blocks[s].w_key, into.blocks[s].w_key);
    axpy(scale_factor, from.blocks[s].w_value, into.blocks[s].w_value);
    axpy(scale_factor, from.blocks[s].ff1, into.blocks[s].ff1);
    axpy(scale_factor, from.blocks[s].ff2, into.blocks[s].ff2);
  }
  axpy(scale_factor, from.pixel_head, into.pixel_head);
  axpy(scale_factor, from.mask_head, into.mask_head);
  axpy(scale_factor, from.classifier, into.classifier);
}

void apply_gradient_step(ModelState& model, const ModelGrads& grads, double lr) {
  axpy(-lr, grads.queries, model.queries);
  for (std::size_t s = 0; s < model.blocks.size(); ++s) {
    axpy(-lr, grads.blocks[s].w_query, model.blocks[s].w_query);
    axpy(-lr, grads.blocks[s].w_key, model.blocks[s].w_key);
    axpy(-lr, grads.blocks[s].w_value, model.blocks[s].w_value);
    axpy(-lr, grads.blocks[s].ff1, model.blocks[s].ff1);
    axpy(-lr, grads.blocks[s].ff2, model.blocks[s].ff2);
  }
  axpy(-lr, grads.pixel_head, model.pixel_head);
  axpy(-lr, grads.mask_head, model.mask_head);
  axpy(-lr, grads.classifier, model.classifier);
}

double max_abs(const ModelGrads& grads) {
  double mx = 0.0;
  auto scan = [&mx](const Mat& m) {
    for (double v : m.data()) mx = std::max(mx, std::fabs(v));
  };
  scan(grads.queries);
  for (const AttentionBlock& b : grads.blocks) {
    scan(b.w_query);
    scan(b.w_key);
    scan(b.w_value);
    scan(b.ff1);
    scan(b.ff2);
  }
  scan(grads.pixel_head);
  scan(grads.mask_head);
  scan(grads.classifier);
  return mx;
}

BackwardResult backward(const ModelState& model, const ForwardTrace& trace,
                        const TraceGrads& grads) {
  const std::size_t s_count = trace.layers.size();
  if (s_count == 0) throw ConfigError("backward: model has no attention blocks");
  BackwardResult res;
  res.params = zeros_like(model);
  res.feature_grads.assign(s_count, Mat(trace.n_queries, trace.dim));

  const Mat& f_final = trace.layers.back().out;

  // Head gradients, all feeding the final query features.
  Mat df(trace.n_queries, trace.dim);
  Mat d_pixel_emb(trace.n_pixels, trace.dim);
  if (!grads.d_prob.empty()) {
    const Mat d_logits = softmax_backward_rows(trace.prob, grads.d_prob);
    res.params.classifier = mul_tn(f_final, d_logits);
    axpy(1.0, mul_nt(d_logits, model.classifier), df);
  }
  if (!grads.d_mask.empty()) {
    Mat d_mask_logits = grads.d_mask;
    for (std::size_t i = 0; i < d_mask_logits.data().size(); ++i) {
      const double m = trace.mask.data()[i];
      d_mask_logits.data()[i] *= m * (1.0 - m);
    }
    const Mat d_mask_emb = mul(d_mask_logits, trace.pixel_emb);
    res.params.mask_head = mul_tn(f_final, d_mask_emb);
    axpy(1.0, mul_nt(d_mask_emb, model.mask_head), df);
    d_pixel_emb = mul_tn(d_mask_logits, trace.mask_emb);
    res.params.pixel_head = mul_tn(trace.input, d_pixel_emb);
  }

  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(trace.dim));
  for (std::size_t s = s_count; s >= 1; --s) {
    const LayerTrace& lt = trace.layers[s - 1];
    const Mat& f_prev = (s == 1) ? model.queries : trace.layers[s - 2].out;
    const AttentionBlock& w = model.blocks[s - 1];
    AttentionBlock& gw = res.params.blocks[s - 1];

    // Direct upstream contribution on this layer's output (distillation).
    if (!grads.d_query_features.empty() && !grads.d_query_features[s - 1].empty()) {
      axpy(1.0, grads.d_query_features[s - 1], df);
    }
    res.feature_grads[s - 1] = df;

    // Feed-forward: out = pre_ff + tanh(pre_ff·ff1)·ff2
    Mat d_hidden = mul_nt(df, w.ff2);
    gw.ff2 = mul_tn(lt.ff_hidden, df);
    for (std::size_t i = 0; i < d_hidden.data().size(); ++i) {
      const double a = lt.ff_hidden.data()[i];
      d_hidden.data()[i] *= 1.0 - a * a;
    }
    gw.ff1 = mul_tn(lt.pre_ff, d_hidden);
    Mat du = df;
    axpy(1.0, mul_nt(d_hidden, w.ff1), du);

    // Attention: pre_ff = f_prev + softmax(q·kᵀ/√d)·v
    const Mat d_att = mul_nt(du, lt.values);
    const Mat d_values = mul_tn(lt.attention, du);
    gw.w_value = mul_tn(trace.input, d_values);
    Mat d_scores = softmax_backward_rows(lt.attention, d_att);
    scale(d_scores, inv_sqrt_d);
    const Mat q = mul(f_prev, w.w_query);
    const Mat dq = mul(d_scores, lt.keys);
    const Mat dk = mul_tn(d_scores, q);
    gw.w_query = mul_tn(f_prev, dq);
    gw.w_key = mul_tn(trace.input, dk);

    df = du;
    axpy(1.0, mul_nt(dq, w.w_query), df);
  }
  res.params.queries = df;
  return res;
}

std::vector<PredictedSegment> predict_segments(const ForwardTrace& trace, double mask_threshold) {
  if (mask_threshold <= 0.0 || mask_threshold >= 1.0) {
    throw ConfigError("predict_segments: mask threshold must lie in (0, 1)");
  }
  std::vector<PredictedSegment> out;
  for (std::size_t i = 0; i < trace.n_queries; ++i) {
    const auto row = trace.prob.row(i);
    std::size_t best = 0;
    for (std::size_t j = 1; j < row.size(); ++j) {
      if (row[j] > row[best]) best = j;
    }
    if (best == trace.no_object_column()) continue;

    PredictedSegment seg;
    seg.query = i;
    seg.confidence = row[best];
    seg.segment.cls = trace.head_classes[best];
    seg.segment.mask = Mask(trace.h, trace.w);
    const auto mrow = trace.mask.row(i);
    for (std::size_t p = 0; p < mrow.size(); ++p) {
      if (mrow[p] >= mask_threshold) seg.segment.mask.cells[p] = 1;
    }
    if (seg.segment.mask.area() == 0) continue;
    out.push_back(std::move(seg));
  }
  return out;
}

namespace {

void append_params(std::vector<double>& out, const Mat& m) {
  out.insert(out.end(), m.data().begin(), m.data().end());
}

void take_params(const std::vector<double>& in, std::size_t& pos, Mat& m) {
  std::copy(in.begin() + static_cast<std::ptrdiff_t>(pos),
            in.begin() + static_cast<std::ptrdiff_t>(pos + m.data().size()), m.data().begin());
  pos += m.data().size();
}

}  // namespace

void save_model(const ModelState& model, const std::filesystem::path& path) {
  nlohmann::json classes = nlohmann::json::array();
  for (const ClassId& c : model.head_classes) {
    classes.push_back({{"id", c.id}, {"kind", c.kind == ClassKind::thing ? "thing" : "stuff"}});
  }
  std::vector<double> params;
  append_params(params, model.queries);
  for (const AttentionBlock& b : model.blocks) {
    append_params(params, b.w_query);
    append_params(params, b.w_key);
    append_params(params, b.w_value);
    append_params(params, b.ff1);
    append_params(params, b.ff2);
  }
  append_params(params, model.pixel_head);
  append_params(params, model.mask_head);
  append_params(params, model.classifier);

  nlohmann::json j = {{"d", model.dim},           {"n_q", model.n_queries},
                      {"s", model.n_layers()},    {"k", model.n_classes()},
                      {"h", model.h},             {"w", model.w},
                      {"classes", classes},       {"params", params}};
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write model file: " + path.string());
  out << j.dump() << "\n";
}

ModelState load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open model file: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("model file " + path.string() + ": " + e.what());
  }
  ModelState m;
  try {
    m.dim = j.at("d").get<std::size_t>();
    m.n_queries = j.at("n_q").get<std::size_t>();
    const std::size_t n_layers = j.at("s").get<std::size_t>();
    const std::size_t k = j.at("k").get<std::size_t>();
    m.h = j.at("h").get<std::size_t>();
    m.w = j.at("w").get<std::size_t>();
    for (const auto& c : j.at("classes")) {
      ClassId cid;
      cid.id = c.at("id").get<std::uint32_t>();
      cid.kind = c.at("kind").get<std::string>() == "stuff" ? ClassKind::stuff : ClassKind::thing;
      m.head_classes.push_back(cid);
    }
    if (m.head_classes.size() != k) throw ConfigError("model file: class count mismatch");

    m.queries = Mat(m.n_queries, m.dim);
    for (std::size_t s = 0; s < n_layers; ++s) {
      AttentionBlock b;
      b.w_query = Mat(m.dim, m.dim);
      b.w_key = Mat(m.dim, m.dim);
      b.w_value = Mat(m.dim, m.dim);
      b.ff1 = Mat(m.dim, m.dim);
      b.ff2 = Mat(m.dim, m.dim);
      m.blocks.push_back(std::move(b));
    }
    m.pixel_head = Mat(m.dim, m.dim);
    m.mask_head = Mat(m.dim, m.dim);
    m.classifier = Mat(m.dim, k + 1);

    const auto params = j.at("params").get<std::vector<double>>();
    std::size_t expected = m.queries.data().size() + m.pixel_head.data().size() +
                           m.mask_head.data().size() + m.classifier.data().size();
    expected += n_layers * 5 * m.dim * m.dim;
    if (params.size() != expected) throw ConfigError("model file: parameter count mismatch");

    std::size_t pos = 0;
    take_params(params, pos, m.queries);
    for (AttentionBlock& b : m.blocks) {
      take_params(params, pos, b.w_query);
      take_params(params, pos, b.w_key);
      take_params(params, pos, b.w_value);
      take_params(params, pos, b.ff1);
      take_params(params, pos, b.ff2);
    }
    take_params(params, pos, m.pixel_head);
    take_params(params, pos, m.mask_head);
    take_params(params, pos, m.classifier);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("model file " + path.string() + ": " + e.what());
  }
  return m;
}

}  // namespace conseg

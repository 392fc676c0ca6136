#pragma once

// Desk-scale encoder-decoder pose transformer: strided conv feature extractor, fixed sine
// positional encoding, transformer encoder/decoder with learned object queries, and four
// MLP prediction heads (class, box, rot6d, translation) shared across query slots.

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "t6d/autograd.hpp"
#include "t6d/errors.hpp"
#include "t6d/geometry.hpp"
#include "t6d/image.hpp"
#include "t6d/json_util.hpp"
#include "t6d/matching.hpp"

namespace t6d {

struct ModelConfig {
  int d_model = 64;
  int n_heads = 4;
  int n_encoder_layers = 2;
  int n_decoder_layers = 2;
  int n_queries = 20;
  int n_classes = 3;
  int image_height = 64;
  int image_width = 64;
  int downsample_factor = 32;
  int head_hidden = 256;
  int dim_feedforward = 128;
  std::vector<int> backbone_widths{16, 32, 64, 64};
  bool pre_norm = false;
  bool allocentric = false;  // rot6d head predicts the allocentric rotation
  std::uint64_t seed = 0;

  /// Stride of the first backbone block; the remaining blocks halve the resolution.
  int stem_stride() const {
    const int rest = 1 << (static_cast<int>(backbone_widths.size()) - 1);
    return downsample_factor / rest;
  }
  int feature_height() const { return image_height / downsample_factor; }
  int feature_width() const { return image_width / downsample_factor; }

  void validate() const {
    if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
    if (d_model % 4 != 0) throw ConfigError("d_model must be divisible by 4 for the 2D sine encoding");
    if (n_encoder_layers < 0 || n_decoder_layers < 1) throw ConfigError("need >= 0 encoder and >= 1 decoder layers");
    if (n_queries < 1) throw ConfigError("n_queries must be positive");
    if (n_classes < 1) throw ConfigError("n_classes must be positive");
    if (head_hidden < 1 || dim_feedforward < 1) throw ConfigError("hidden sizes must be positive");
    if (backbone_widths.empty()) throw ConfigError("backbone needs at least one block");
    const int rest = 1 << (static_cast<int>(backbone_widths.size()) - 1);
    if (downsample_factor < rest || downsample_factor % rest != 0)
      throw ConfigError("downsample_factor must be a multiple of 2^(blocks-1)");
    if (image_height <= 0 || image_width <= 0 || image_height % downsample_factor != 0 ||
        image_width % downsample_factor != 0)
      throw ShapeError("image dimensions must be positive multiples of downsample_factor");
  }
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"d_model", c.d_model},
          {"n_heads", c.n_heads},
          {"n_encoder_layers", c.n_encoder_layers},
          {"n_decoder_layers", c.n_decoder_layers},
          {"n_queries", c.n_queries},
          {"n_classes", c.n_classes},
          {"image_height", c.image_height},
          {"image_width", c.image_width},
          {"downsample_factor", c.downsample_factor},
          {"head_hidden", c.head_hidden},
          {"dim_feedforward", c.dim_feedforward},
          {"backbone_widths", c.backbone_widths},
          {"pre_norm", c.pre_norm},
          {"allocentric", c.allocentric},
          {"seed", c.seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& where = "model") {
  ModelConfig c;
  StrictObjectReader r(j, where);
  r.get("d_model", c.d_model)
      .get("n_heads", c.n_heads)
      .get("n_encoder_layers", c.n_encoder_layers)
      .get("n_decoder_layers", c.n_decoder_layers)
      .get("n_queries", c.n_queries)
      .get("n_classes", c.n_classes)
      .get("image_height", c.image_height)
      .get("image_width", c.image_width)
      .get("downsample_factor", c.downsample_factor)
      .get("head_hidden", c.head_hidden)
      .get("dim_feedforward", c.dim_feedforward)
      .get("backbone_widths", c.backbone_widths)
      .get("pre_norm", c.pre_norm)
      .get("allocentric", c.allocentric)
      .get("seed", c.seed);
  r.finish();
  return c;
}

/// Per-layer, per-head attention matrices recorded during a forward pass (layer-major).
struct AttentionRecord {
  std::vector<ag::Var> encoder_self;
  std::vector<ag::Var> decoder_self;
  std::vector<ag::Var> decoder_cross;
};

struct HeadOutputs {
  ag::Var logits;       // N x (C+1)
  ag::Var bbox;         // N x 4, after the sigmoid
  ag::Var rot6d;        // N x 6
  ag::Var translation;  // N x 3
};

struct ForwardResult {
  HeadOutputs final_outputs;
  std::vector<HeadOutputs> aux_outputs;  // intermediate decoder layers, when requested
  ag::Var features;                      // d x (h*w)
  ag::Var memory;                        // (h*w) x d
  int feature_height = 0;
  int feature_width = 0;
  AttentionRecord attention;
};

/// Fixed 2D sine encoding: first d/2 channels encode the row, the rest the column; within
/// each half, channel 2k is sin(p / T^(2k/(d/2))) and 2k+1 the matching cosine.
inline ag::Tensor sine_positional_encoding(int h, int w, int d, double temperature = 10000.0) {
  if (h <= 0 || w <= 0 || d <= 0 || d % 4 != 0) throw ShapeError("sine encoding needs positive sizes and d % 4 == 0");
  const int half = d / 2;
  ag::Tensor pe(h * w, d);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int row = y * w + x;
      for (int k = 0; k < half; k += 2) {
        const double freq = std::pow(temperature, static_cast<double>(k) / half);
        pe(row, k) = std::sin(y / freq);
        pe(row, k + 1) = std::cos(y / freq);
        pe(row, half + k) = std::sin(x / freq);
        pe(row, half + k + 1) = std::cos(x / freq);
      }
    }
  return pe;
}

class PoseTransformer {
 public:
  explicit PoseTransformer(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    build_parameters();
  }

  const ModelConfig& config() const { return cfg_; }
  ag::ParameterStore& params() { return params_; }
  const ag::ParameterStore& params() const { return params_; }

  /// True for parameters that belong to the prediction heads.
  static bool is_head_parameter(const std::string& name) { return name.rfind("heads.", 0) == 0; }

  // -------------------------------------------------------------------------

  ag::Var image_input(ag::Graph& g, const ImageTensor& image) const {
    if (image.height != cfg_.image_height || image.width != cfg_.image_width)
      throw ShapeError("image is " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                       ", model expects " + std::to_string(cfg_.image_height) + "x" +
                       std::to_string(cfg_.image_width));
    ag::Tensor x(3, image.height * image.width);
    x.data = image.data;
    return g.constant(std::move(x));
  }

  /// Backbone + 1x1 projection; returns d x (h*w) with h, w = image / downsample_factor.
  ag::Var extract_features(ag::Graph& g, const ImageTensor& image) const {
    if (image.height % cfg_.downsample_factor != 0 || image.width % cfg_.downsample_factor != 0)
      throw ShapeError("image dimensions must be divisible by downsample_factor");
    ag::Var x = image_input(g, image);
    int h = image.height, w = image.width, ch = 3;
    for (std::size_t i = 0; i < cfg_.backbone_widths.size(); ++i) {
      ag::ConvGeometry geo = block_geometry(i, ch, h, w);
      const std::string p = "backbone.block" + std::to_string(i);
      x = ag::relu(g, ag::conv2d(g, x, g.param(params_, p + ".weight"), g.param(params_, p + ".bias"), geo));
      h = geo.out_height();
      w = geo.out_width();
      ch = cfg_.backbone_widths[i];
    }
    ag::Var proj = ag::matmul(g, g.param(params_, "input_proj.weight"), x);
    return ag::add_col(g, proj, g.param(params_, "input_proj.bias"));
  }

  /// Multi-head attention; inputs are (L x d) token matrices.
  ag::Var attention(ag::Graph& g, const std::string& prefix, ag::Var query, ag::Var key, ag::Var value,
                    std::vector<ag::Var>* record) const {
    const int d = cfg_.d_model, dh = d / cfg_.n_heads;
    ag::Var q = proj(g, prefix + ".q", query);
    ag::Var k = proj(g, prefix + ".k", key);
    ag::Var v = proj(g, prefix + ".v", value);
    std::vector<ag::Var> heads;
    for (int hd = 0; hd < cfg_.n_heads; ++hd) {
      ag::Var qh = ag::slice_cols(g, q, hd * dh, dh);
      ag::Var kh = ag::slice_cols(g, k, hd * dh, dh);
      ag::Var vh = ag::slice_cols(g, v, hd * dh, dh);
      ag::Var scores = ag::scale(g, ag::matmul_nt(g, qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)));
      ag::Var attn = ag::softmax_rows(g, scores);
      if (record) record->push_back(attn);
      heads.push_back(ag::matmul(g, attn, vh));
    }
    ag::Var cat = cfg_.n_heads == 1 ? heads[0] : ag::concat_cols(g, heads);
    return proj(g, prefix + ".out", cat);
  }

  /// Encoder stack over (h*w) x d tokens; `pos` is added to queries and keys at every layer.
  ag::Var encoder_forward(ag::Graph& g, ag::Var tokens, const ag::Tensor& pos, AttentionRecord* rec = nullptr) const {
    ag::Var p = g.constant(pos);
    ag::Var x = tokens;
    for (int l = 0; l < cfg_.n_encoder_layers; ++l) {
      const std::string pre = "encoder.layers." + std::to_string(l);
      auto* r = rec ? &rec->encoder_self : nullptr;
      if (cfg_.pre_norm) {
        ag::Var y = norm(g, pre + ".norm1", x);
        ag::Var qk = ag::add(g, y, p);
        x = ag::add(g, x, attention(g, pre + ".self_attn", qk, qk, y, r));
        x = ag::add(g, x, ffn(g, pre, norm(g, pre + ".norm2", x)));
      } else {
        ag::Var qk = ag::add(g, x, p);
        x = norm(g, pre + ".norm1", ag::add(g, x, attention(g, pre + ".self_attn", qk, qk, x, r)));
        x = norm(g, pre + ".norm2", ag::add(g, x, ffn(g, pre, x)));
      }
    }
    return x;
  }

  /// Decoder stack; returns the normalized output embeddings (N x d) of every layer.
  std::vector<ag::Var> decoder_forward(ag::Graph& g, ag::Var memory, const ag::Tensor& pos, ag::Var queries,
                                       AttentionRecord* rec = nullptr) const {
    ag::Var mem_pos = ag::add(g, memory, g.constant(pos));
    ag::Var tgt = g.constant(ag::Tensor(g.value(queries).rows, cfg_.d_model));
    std::vector<ag::Var> outs;
    for (int l = 0; l < cfg_.n_decoder_layers; ++l) {
      const std::string pre = "decoder.layers." + std::to_string(l);
      auto* rs = rec ? &rec->decoder_self : nullptr;
      auto* rc = rec ? &rec->decoder_cross : nullptr;
      if (cfg_.pre_norm) {
        ag::Var y = norm(g, pre + ".norm1", tgt);
        ag::Var qk = ag::add(g, y, queries);
        tgt = ag::add(g, tgt, attention(g, pre + ".self_attn", qk, qk, y, rs));
        y = norm(g, pre + ".norm2", tgt);
        tgt = ag::add(g, tgt, attention(g, pre + ".cross_attn", ag::add(g, y, queries), mem_pos, memory, rc));
        tgt = ag::add(g, tgt, ffn(g, pre, norm(g, pre + ".norm3", tgt)));
      } else {
        ag::Var qk = ag::add(g, tgt, queries);
        tgt = norm(g, pre + ".norm1", ag::add(g, tgt, attention(g, pre + ".self_attn", qk, qk, tgt, rs)));
        ag::Var ca = attention(g, pre + ".cross_attn", ag::add(g, tgt, queries), mem_pos, memory, rc);
        tgt = norm(g, pre + ".norm2", ag::add(g, tgt, ca));
        tgt = norm(g, pre + ".norm3", ag::add(g, tgt, ffn(g, pre, tgt)));
      }
      outs.push_back(norm(g, "decoder.norm", tgt));
    }
    return outs;
  }

  /// Four three-layer MLP heads applied row-wise to N x d embeddings.
  HeadOutputs prediction_heads(ag::Graph& g, ag::Var embeddings) const {
    HeadOutputs h;
    h.logits = mlp(g, "heads.class", embeddings);
    h.bbox = ag::sigmoid(g, mlp(g, "heads.bbox", embeddings));
    h.rot6d = mlp(g, "heads.rot6d", embeddings);
    h.translation = mlp(g, "heads.translation", embeddings);
    return h;
  }

  ForwardResult forward(ag::Graph& g, const ImageTensor& image, bool with_aux = false) const {
    ForwardResult r;
    r.features = extract_features(g, image);
    r.feature_height = image.height / cfg_.downsample_factor;
    r.feature_width = image.width / cfg_.downsample_factor;
    const ag::Tensor pos = sine_positional_encoding(r.feature_height, r.feature_width, cfg_.d_model);
    ag::Var tokens = ag::transpose(g, r.features);
    r.memory = encoder_forward(g, tokens, pos, &r.attention);
    const auto outs = decoder_forward(g, r.memory, pos, g.param(params_, "query_embed"), &r.attention);
    r.final_outputs = prediction_heads(g, outs.back());
    if (with_aux)
      for (std::size_t i = 0; i + 1 < outs.size(); ++i) r.aux_outputs.push_back(prediction_heads(g, outs[i]));
    return r;
  }

  /// Raw head outputs as a PredictionSet (rotation in the network's native frame).
  static PredictionSet to_prediction_set(const ag::Graph& g, const HeadOutputs& h) {
    const auto& L = g.value(h.logits);
    const auto& B = g.value(h.bbox);
    const auto& R = g.value(h.rot6d);
    const auto& T = g.value(h.translation);
    PredictionSet s;
    for (int i = 0; i < L.rows; ++i) {
      PredictionTuple t;
      t.class_logits.assign(L.data.begin() + static_cast<std::ptrdiff_t>(i) * L.cols,
                            L.data.begin() + static_cast<std::ptrdiff_t>(i + 1) * L.cols);
      t.bbox = {B(i, 0), B(i, 1), B(i, 2), B(i, 3)};
      t.rot6d = {Vec3(R(i, 0), R(i, 1), R(i, 2)), Vec3(R(i, 3), R(i, 4), R(i, 5))};
      t.translation = Vec3(T(i, 0), T(i, 1), T(i, 2));
      s.tuples.push_back(std::move(t));
    }
    return s;
  }

  /// Inference: one forward pass, rotations converted to the egocentric camera frame.
  PredictionSet predict(const ImageTensor& image) const {
    ag::Graph g;
    const auto r = forward(g, image);
    PredictionSet s = to_prediction_set(g, r.final_outputs);
    if (cfg_.allocentric) {
      for (auto& t : s.tuples) {
        try {
          const Pose ego = allocentric_to_egocentric({rot6d_to_matrix(t.rot6d), t.translation});
          t.rot6d = matrix_to_rot6d(ego.rotation);
        } catch (const DegenerateInput&) {
          // left in the allocentric frame; only reachable for a prediction at the camera origin
        }
      }
    }
    return s;
  }

 private:
  ag::ConvGeometry block_geometry(std::size_t i, int in_ch, int h, int w) const {
    ag::ConvGeometry geo{in_ch, h, w, 3, 2, 1};
    if (i == 0) {
      const int s = cfg_.stem_stride();
      geo.stride = s;
      geo.kernel = s >= 2 ? s : 3;
      geo.pad = s >= 2 ? 0 : 1;
    }
    return geo;
  }

  ag::Var proj(ag::Graph& g, const std::string& name, ag::Var x) const {
    return ag::linear(g, x, g.param(params_, name + ".weight"), g.param(params_, name + ".bias"));
  }

  ag::Var norm(ag::Graph& g, const std::string& name, ag::Var x) const {
    return ag::layer_norm(g, x, g.param(params_, name + ".weight"), g.param(params_, name + ".bias"));
  }

  ag::Var ffn(ag::Graph& g, const std::string& layer, ag::Var x) const {
    return proj(g, layer + ".ffn.linear2", ag::relu(g, proj(g, layer + ".ffn.linear1", x)));
  }

  ag::Var mlp(ag::Graph& g, const std::string& name, ag::Var x) const {
    x = ag::relu(g, proj(g, name + ".layers.0", x));
    x = ag::relu(g, proj(g, name + ".layers.1", x));
    return proj(g, name + ".layers.2", x);
  }

  void add_uniform(const std::string& name, int rows, int cols, int fan_in, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    ag::Tensor t(rows, cols);
    for (double& v : t.data) v = u(rng);
    params_.add(name, std::move(t));
  }

  void add_linear(const std::string& name, int in, int out, std::mt19937_64& rng) {
    add_uniform(name + ".weight", in, out, in, rng);
    add_uniform(name + ".bias", 1, out, in, rng);
  }

  void add_norm(const std::string& name) {
    params_.add(name + ".weight", ag::Tensor(1, cfg_.d_model, 1.0));
    params_.add(name + ".bias", ag::Tensor(1, cfg_.d_model, 0.0));
  }

  void add_attention(const std::string& name, std::mt19937_64& rng) {
    for (const char* p : {".q", ".k", ".v", ".out"}) add_linear(name + p, cfg_.d_model, cfg_.d_model, rng);
  }

  void build_parameters() {
    std::mt19937_64 rng(cfg_.seed);
    const int d = cfg_.d_model;
    int ch = 3;
    for (std::size_t i = 0; i < cfg_.backbone_widths.size(); ++i) {
      const auto geo = block_geometry(i, ch, cfg_.image_height, cfg_.image_width);
      const int fan_in = ch * geo.kernel * geo.kernel;
      const std::string p = "backbone.block" + std::to_string(i);
      add_uniform(p + ".weight", cfg_.backbone_widths[i], fan_in, fan_in, rng);
      add_uniform(p + ".bias", cfg_.backbone_widths[i], 1, fan_in, rng);
      ch = cfg_.backbone_widths[i];
    }
    add_uniform("input_proj.weight", d, ch, ch, rng);
    add_uniform("input_proj.bias", d, 1, ch, rng);
    for (int l = 0; l < cfg_.n_encoder_layers; ++l) {
      const std::string pre = "encoder.layers." + std::to_string(l);
      add_attention(pre + ".self_attn", rng);
      add_linear(pre + ".ffn.linear1", d, cfg_.dim_feedforward, rng);
      add_linear(pre + ".ffn.linear2", cfg_.dim_feedforward, d, rng);
      add_norm(pre + ".norm1");
      add_norm(pre + ".norm2");
    }
    for (int l = 0; l < cfg_.n_decoder_layers; ++l) {
      const std::string pre = "decoder.layers." + std::to_string(l);
      add_attention(pre + ".self_attn", rng);
      add_attention(pre + ".cross_attn", rng);
      add_linear(pre + ".ffn.linear1", d, cfg_.dim_feedforward, rng);
      add_linear(pre + ".ffn.linear2", cfg_.dim_feedforward, d, rng);
      add_norm(pre + ".norm1");
      add_norm(pre + ".norm2");
      add_norm(pre + ".norm3");
    }
    add_norm("decoder.norm");
    {
      std::normal_distribution<double> normal(0.0, 1.0);
      ag::Tensor q(cfg_.n_queries, d);
      for (double& v : q.data) v = normal(rng);
      params_.add("query_embed", std::move(q));
    }
    const int hid = cfg_.head_hidden;
    const std::pair<const char*, int> heads[] = {
        {"heads.class", cfg_.n_classes + 1}, {"heads.bbox", 4}, {"heads.rot6d", 6}, {"heads.translation", 3}};
    for (const auto& [name, out] : heads) {
      add_linear(std::string(name) + ".layers.0", d, hid, rng);
      add_linear(std::string(name) + ".layers.1", hid, hid, rng);
      add_linear(std::string(name) + ".layers.2", hid, out, rng);
    }
  }

  ModelConfig cfg_;
  ag::ParameterStore params_;
};

/// Encoder self-attention and decoder self/cross-attention matrices for one image, as JSON:
/// {feature_height, feature_width, n_heads, encoder_self|decoder_self|decoder_cross: [{layer, head, rows, cols, data}]}
inline nlohmann::json export_attention(const PoseTransformer& net, const ImageTensor& image) {
  ag::Graph g;
  const auto r = net.forward(g, image);
  const int heads = net.config().n_heads;
  auto dump = [&](const std::vector<ag::Var>& mats) {
    nlohmann::json arr = nlohmann::json::array();
    for (std::size_t i = 0; i < mats.size(); ++i) {
      const auto& t = g.value(mats[i]);
      arr.push_back({{"layer", static_cast<int>(i) / heads},
                     {"head", static_cast<int>(i) % heads},
                     {"rows", t.rows},
                     {"cols", t.cols},
                     {"data", t.data}});
    }
    return arr;
  };
  return {{"feature_height", r.feature_height},
          {"feature_width", r.feature_width},
          {"n_heads", heads},
          {"encoder_self", dump(r.attention.encoder_self)},
          {"decoder_self", dump(r.attention.decoder_self)},
          {"decoder_cross", dump(r.attention.decoder_cross)}};
}

}  // namespace t6d

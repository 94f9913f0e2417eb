#include "mmca/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace mmca {

void ModelConfig::validate() const {
  if (n_segments <= 0)
    throw std::invalid_argument("ModelConfig: n_segments must be positive");
  if (H <= 0 || F <= 0)
    throw std::invalid_argument("ModelConfig: H and F must be positive");
  if (d_hidden() % heads != 0)
    throw std::invalid_argument(
        "ModelConfig: hidden dim " + std::to_string(d_hidden()) +
        " not divisible by " + std::to_string(heads) + " heads");
  if (layers <= 0)
    throw std::invalid_argument("ModelConfig: layers must be positive");
  if (dropout < 0.0 || dropout >= 1.0)
    throw std::invalid_argument("ModelConfig: dropout must lie in [0, 1)");
  if (steps_per_day <= 0 || steps_per_day < H + F)
    throw std::invalid_argument("ModelConfig: steps_per_day too small");
}

Tensor& ModelParams::add(const std::string& name, Tensor t) {
  if (index_.count(name))
    throw std::invalid_argument("ModelParams: duplicate name " + name);
  index_[name] = entries_.size();
  entries_.emplace_back(name, std::move(t));
  return entries_.back().second;
}

const Tensor& ModelParams::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end())
    throw std::invalid_argument("ModelParams: unknown parameter " + name);
  return entries_[it->second].second;
}

bool ModelParams::has(const std::string& name) const {
  return index_.count(name) != 0;
}

int64_t ModelParams::parameter_count() const {
  int64_t n = 0;
  for (const auto& [name, t] : entries_) n += t.numel();
  return n;
}

namespace {

Tensor xavier(Shape shape, std::mt19937_64& rng) {
  int fan_in = shape.size() >= 2 ? shape[shape.size() - 2] : shape.back();
  int fan_out = shape.back();
  double bound = std::sqrt(6.0 / (fan_in + fan_out));
  return Tensor::uniform(std::move(shape), rng, -bound, bound, true);
}

void add_attention_weights(ModelParams& p, const std::string& prefix, int d,
                           std::mt19937_64& rng) {
  p.add(prefix + ".wq", xavier({d, d}, rng));
  p.add(prefix + ".wk", xavier({d, d}, rng));
  p.add(prefix + ".wv", xavier({d, d}, rng));
  p.add(prefix + ".wo", xavier({d, d}, rng));
}

void add_sublayer_params(ModelParams& p, const std::string& prefix,
                         const ModelConfig& c, std::mt19937_64& rng) {
  int d = c.d_hidden();
  add_attention_weights(p, prefix + ".self", d, rng);
  if (c.use_micro) {
    if (c.use_cross_attention) {
      add_attention_weights(p, prefix + ".cross", d, rng);
    } else {
      p.add(prefix + ".concat.w", xavier({2 * d, d}, rng));
      p.add(prefix + ".concat.b", Tensor::zeros({d}, true));
    }
  }
  p.add(prefix + ".fuse_ln.scale", Tensor::full({d}, 1.0, true));
  p.add(prefix + ".fuse_ln.shift", Tensor::zeros({d}, true));
  int dff = c.ff_mult * d;
  p.add(prefix + ".ff.w1", xavier({d, dff}, rng));
  p.add(prefix + ".ff.b1", Tensor::zeros({dff}, true));
  p.add(prefix + ".ff.w2", xavier({dff, d}, rng));
  p.add(prefix + ".ff.b2", Tensor::zeros({d}, true));
  p.add(prefix + ".ff_ln.scale", Tensor::full({d}, 1.0, true));
  p.add(prefix + ".ff_ln.shift", Tensor::zeros({d}, true));
}

void add_stream_embedding(ModelParams& p, const std::string& stream, int d_in,
                          const ModelConfig& c, std::mt19937_64& rng) {
  p.add("embed." + stream + ".fc.w", xavier({d_in, c.d_f}, rng));
  p.add("embed." + stream + ".fc.b", Tensor::zeros({c.d_f}, true));
  p.add("embed." + stream + ".dow", xavier({7, c.d_dow}, rng));
  p.add("embed." + stream + ".tod", xavier({c.steps_per_day, c.d_tod}, rng));
  p.add("embed." + stream + ".adp",
        xavier({c.H, c.n_segments, c.d_a}, rng));
}

}  // namespace

ModelParams init_params(const ModelConfig& c, uint64_t seed) {
  c.validate();
  std::mt19937_64 rng(seed);
  ModelParams p;
  add_stream_embedding(p, "macro", kNumMacro, c, rng);
  if (c.use_micro) add_stream_embedding(p, "micro", kNumMicro, c, rng);
  if (c.use_spatial)
    for (int l = 0; l < c.layers; ++l)
      add_sublayer_params(p, "spatial." + std::to_string(l), c, rng);
  if (c.use_temporal)
    for (int l = 0; l < c.layers; ++l)
      add_sublayer_params(p, "temporal." + std::to_string(l), c, rng);
  int d_flat = c.H * c.d_hidden();
  for (const char* head : {"mean", "var", "df"}) {
    p.add(std::string("head.") + head + ".w", xavier({d_flat, c.F}, rng));
    p.add(std::string("head.") + head + ".b", Tensor::zeros({c.F}, true));
  }
  return p;
}

BatchInput make_batch(const std::vector<const NormalizedWindow*>& windows,
                      const ModelConfig& config) {
  if (windows.empty()) throw std::invalid_argument("make_batch: empty batch");
  int B = static_cast<int>(windows.size());
  int H = config.H, F = config.F, N = config.n_segments;
  BatchInput in;
  in.B = B;
  std::vector<double> macro(static_cast<size_t>(B) * H * N * kNumMacro);
  std::vector<double> micro(static_cast<size_t>(B) * H * N * kNumMicro);
  std::vector<double> target(static_cast<size_t>(B) * N * F);
  in.tod_index.resize(static_cast<size_t>(B) * H);
  in.dow_index.resize(static_cast<size_t>(B) * H);
  for (int b = 0; b < B; ++b) {
    const NormalizedWindow& w = *windows[b];
    if (w.raw.H != H || w.raw.F != F || w.raw.N != N)
      throw std::invalid_argument("make_batch: window shape mismatch");
    std::copy(w.macro.begin(), w.macro.end(),
              macro.begin() + static_cast<size_t>(b) * H * N * kNumMacro);
    std::copy(w.micro.begin(), w.micro.end(),
              micro.begin() + static_cast<size_t>(b) * H * N * kNumMicro);
    for (int t = 0; t < H; ++t) {
      if (w.raw.tod_index[t] >= config.steps_per_day)
        throw std::invalid_argument("make_batch: tod index out of range");
      in.tod_index[static_cast<size_t>(b) * H + t] = w.raw.tod_index[t];
      in.dow_index[static_cast<size_t>(b) * H + t] = w.raw.dow_index[t];
    }
    // target arrives (F, N); store as (N, F) to match the head output
    for (int t = 0; t < F; ++t)
      for (int n = 0; n < N; ++n)
        target[(static_cast<size_t>(b) * N + n) * F + t] =
            w.target[static_cast<size_t>(t) * N + n];
  }
  in.macro = Tensor({B, H, N, kNumMacro}, std::move(macro));
  in.micro = Tensor({B, H, N, kNumMicro}, std::move(micro));
  in.target = Tensor({B, N, F}, std::move(target));
  return in;
}

namespace {

struct MhaOut {
  Tensor value;   // (B, G, S, d)
  Tensor scores;  // (B, G, heads, S_q, S_k), softmax output
};

// Multi-head attention over the third axis of (B, G, S, d) inputs.
MhaOut multi_head_attention(const Tensor& q_in, const Tensor& kv_in,
                            const ModelParams& p, const std::string& prefix,
                            const ModelConfig& c, bool train,
                            std::mt19937_64& rng) {
  int d = c.d_hidden();
  int hd = d / c.heads;
  auto split_heads = [&](Tensor t) {
    const Shape& s = t.shape();
    Tensor r = reshape(t, {s[0], s[1], s[2], c.heads, hd});
    return transpose(r, 2, 3);  // (B, G, heads, S, hd)
  };
  Tensor q = split_heads(matmul(q_in, p.get(prefix + ".wq")));
  Tensor k = split_heads(matmul(kv_in, p.get(prefix + ".wk")));
  Tensor v = split_heads(matmul(kv_in, p.get(prefix + ".wv")));
  Tensor logits = mul_scalar(matmul(q, transpose(k, -1, -2)),
                             1.0 / std::sqrt(static_cast<double>(hd)));
  Tensor probs = softmax(logits, -1);
  Tensor attended = matmul(dropout(probs, c.dropout, rng, train), v);
  Tensor merged = transpose(attended, 2, 3);
  const Shape& ms = merged.shape();
  Tensor out = matmul(reshape(merged, {ms[0], ms[1], ms[2], d}),
                      p.get(prefix + ".wo"));
  return {out, probs};
}

Tensor linear(const Tensor& x, const ModelParams& p, const std::string& w,
              const std::string& b) {
  return add(matmul(x, p.get(w)), p.get(b));
}

// One macro-micro attention sublayer on (B, G, S, d) inputs: self-attention,
// optional cross-attention against the micro stream, residual fusion + LN,
// then a position-wise feed-forward with its own residual + LN.
Tensor attention_sublayer(const Tensor& z_macro, const Tensor& z_micro,
                          const ModelParams& p, const std::string& prefix,
                          const ModelConfig& c, bool train,
                          std::mt19937_64& rng, Tensor* self_scores,
                          Tensor* cross_scores) {
  MhaOut self = multi_head_attention(z_macro, z_macro, p, prefix + ".self", c,
                                     train, rng);
  if (self_scores) *self_scores = self.scores;
  Tensor fused;
  if (c.use_micro) {
    Tensor cross_out;
    if (c.use_cross_attention) {
      MhaOut cross = multi_head_attention(self.value, z_micro, p,
                                          prefix + ".cross", c, train, rng);
      if (cross_scores) *cross_scores = cross.scores;
      cross_out = cross.value;
    } else {
      cross_out = linear(concat({self.value, z_micro}, -1), p,
                         prefix + ".concat.w", prefix + ".concat.b");
    }
    fused = add(self.value, cross_out);
  } else {
    fused = self.value;
  }
  fused = layer_norm(fused, p.get(prefix + ".fuse_ln.scale"),
                     p.get(prefix + ".fuse_ln.shift"));
  Tensor ff = linear(relu(linear(fused, p, prefix + ".ff.w1", prefix + ".ff.b1")),
                     p, prefix + ".ff.w2", prefix + ".ff.b2");
  ff = dropout(ff, c.dropout, rng, train);
  return layer_norm(add(fused, ff), p.get(prefix + ".ff_ln.scale"),
                    p.get(prefix + ".ff_ln.shift"));
}

// Concatenated stream embedding: FC(features) | DoW | ToD | adaptive.
Tensor embed_stream(const Tensor& feats, const std::vector<int>& tod,
                    const std::vector<int>& dow, const ModelParams& p,
                    const std::string& stream, const ModelConfig& c) {
  int B = feats.shape()[0], H = c.H, N = c.n_segments;
  Tensor fc = linear(feats, p, "embed." + stream + ".fc.w",
                     "embed." + stream + ".fc.b");
  Tensor e_dow = broadcast_to(
      reshape(embedding_lookup(p.get("embed." + stream + ".dow"), dow),
              {B, H, 1, c.d_dow}),
      {B, H, N, c.d_dow});
  Tensor e_tod = broadcast_to(
      reshape(embedding_lookup(p.get("embed." + stream + ".tod"), tod),
              {B, H, 1, c.d_tod}),
      {B, H, N, c.d_tod});
  Tensor e_adp = broadcast_to(
      reshape(p.get("embed." + stream + ".adp"), {1, H, N, c.d_a}),
      {B, H, N, c.d_a});
  return concat({fc, e_dow, e_tod, e_adp}, -1);
}

}  // namespace

ForwardResult forward_model(const BatchInput& input, const ModelParams& p,
                            const ModelConfig& c, bool train,
                            std::mt19937_64& rng) {
  int B = input.B, H = c.H, N = c.n_segments, d = c.d_hidden();

  Tensor z_macro = embed_stream(input.macro, input.tod_index, input.dow_index,
                                p, "macro", c);
  Tensor z_micro, z_micro_t;
  if (c.use_micro) {
    Tensor micro_in = input.micro;
    bool any_masked = false;
    for (bool keep : c.micro_feature_mask) any_masked = any_masked || !keep;
    if (any_masked) {
      std::vector<double> mask(kNumMicro);
      for (int i = 0; i < kNumMicro; ++i)
        mask[i] = c.micro_feature_mask[i] ? 1.0 : 0.0;
      micro_in = mul(micro_in, Tensor({kNumMicro}, mask));
    }
    z_micro = embed_stream(micro_in, input.tod_index, input.dow_index, p,
                           "micro", c);
    z_micro_t = transpose(z_micro, 1, 2);  // (B, N, H, d)
  }

  ForwardResult result;
  result.scores.layers.resize(c.layers);

  Tensor z = z_macro;  // (B, H, N, d)
  if (c.use_spatial)
    for (int l = 0; l < c.layers; ++l)
      z = attention_sublayer(z, z_micro, p, "spatial." + std::to_string(l), c,
                             train, rng,
                             &result.scores.layers[l].spatial_self,
                             &result.scores.layers[l].spatial_cross);
  if (c.use_temporal) {
    Tensor zt = transpose(z, 1, 2);  // (B, N, H, d)
    for (int l = 0; l < c.layers; ++l)
      zt = attention_sublayer(zt, z_micro_t, p,
                              "temporal." + std::to_string(l), c, train, rng,
                              &result.scores.layers[l].temporal_self,
                              &result.scores.layers[l].temporal_cross);
    z = transpose(zt, 1, 2);
  }

  Tensor flat = reshape(transpose(z, 1, 2), {B, N, H * d});
  result.mean = linear(flat, p, "head.mean.w", "head.mean.b");
  result.scale2 = softplus(linear(flat, p, "head.var.w", "head.var.b"));
  result.df = add_scalar(softplus(linear(flat, p, "head.df.w", "head.df.b")),
                         2.0);
  return result;
}

// --- checkpoint ------------------------------------------------------------

namespace {

constexpr char kCkptMagic[4] = {'M', 'M', 'C', 'K'};

nlohmann::json config_to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["n_segments"] = c.n_segments;
  j["H"] = c.H;
  j["F"] = c.F;
  j["d_f"] = c.d_f;
  j["d_dow"] = c.d_dow;
  j["d_tod"] = c.d_tod;
  j["d_a"] = c.d_a;
  j["layers"] = c.layers;
  j["heads"] = c.heads;
  j["dropout"] = c.dropout;
  j["steps_per_day"] = c.steps_per_day;
  j["ff_mult"] = c.ff_mult;
  j["use_spatial"] = c.use_spatial;
  j["use_temporal"] = c.use_temporal;
  j["use_cross_attention"] = c.use_cross_attention;
  j["use_micro"] = c.use_micro;
  j["micro_feature_mask"] = c.micro_feature_mask;
  return j;
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.n_segments = j["n_segments"];
  c.H = j["H"];
  c.F = j["F"];
  c.d_f = j["d_f"];
  c.d_dow = j["d_dow"];
  c.d_tod = j["d_tod"];
  c.d_a = j["d_a"];
  c.layers = j["layers"];
  c.heads = j["heads"];
  c.dropout = j["dropout"];
  c.steps_per_day = j["steps_per_day"];
  c.ff_mult = j["ff_mult"];
  c.use_spatial = j["use_spatial"];
  c.use_temporal = j["use_temporal"];
  c.use_cross_attention = j["use_cross_attention"];
  c.use_micro = j["use_micro"];
  auto mask = j["micro_feature_mask"].get<std::vector<bool>>();
  for (int i = 0; i < kNumMicro; ++i) c.micro_feature_mask[i] = mask[i];
  return c;
}

void write_u64(std::ostream& os, uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(buf, 8);
}

uint64_t read_u64(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelConfig& config,
                     const ModelParams& params, const NormStats& stats) {
  nlohmann::json manifest;
  manifest["format"] = "mmca-checkpoint-v1";
  manifest["config"] = config_to_json(config);
  manifest["norm_stats"]["min"] = stats.min;
  manifest["norm_stats"]["max"] = stats.max;
  nlohmann::json names = nlohmann::json::array();
  for (const auto& [name, t] : params.entries())
    names.push_back({{"name", name}, {"shape", t.shape()}});
  manifest["parameters"] = names;
  std::string ms = manifest.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
  os.write(kCkptMagic, 4);
  write_u64(os, ms.size());
  os.write(ms.data(), static_cast<std::streamsize>(ms.size()));
  for (const auto& [name, t] : params.entries())
    os.write(reinterpret_cast<const char*>(t.data().data()),
             static_cast<std::streamsize>(t.data().size() * sizeof(double)));
  if (!os) throw std::runtime_error("save_checkpoint: write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCkptMagic, 4) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  uint64_t mlen = read_u64(is);
  std::string ms(mlen, '\0');
  is.read(ms.data(), static_cast<std::streamsize>(mlen));
  auto manifest = nlohmann::json::parse(ms);

  Checkpoint ckpt;
  ckpt.config = config_from_json(manifest["config"]);
  auto mn = manifest["norm_stats"]["min"].get<std::vector<double>>();
  auto mx = manifest["norm_stats"]["max"].get<std::vector<double>>();
  std::copy(mn.begin(), mn.end(), ckpt.stats.min.begin());
  std::copy(mx.begin(), mx.end(), ckpt.stats.max.begin());
  for (const auto& entry : manifest["parameters"]) {
    Shape shape = entry["shape"].get<Shape>();
    Tensor t(shape, true);
    is.read(reinterpret_cast<char*>(t.data().data()),
            static_cast<std::streamsize>(t.data().size() * sizeof(double)));
    ckpt.params.add(entry["name"], std::move(t));
  }
  if (!is) throw std::runtime_error("load_checkpoint: truncated: " + path);
  return ckpt;
}

void export_attention_csv(const std::string& path,
                          const AttentionScores& scores) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("export_attention_csv: cannot open " + path);
  os << "layer,kind,head,axis_index,query,key,score\n";
  auto dump = [&](int layer, const char* kind, const Tensor& t) {
    if (!t.defined()) return;
    // (B, G, heads, Sq, Sk); batch element 0
    const Shape& s = t.shape();
    int G = s[1], heads = s[2], sq = s[3], sk = s[4];
    const auto& d = t.data();
    for (int g = 0; g < G; ++g)
      for (int h = 0; h < heads; ++h)
        for (int q = 0; q < sq; ++q)
          for (int k = 0; k < sk; ++k)
            os << layer << ',' << kind << ',' << h << ',' << g << ',' << q
               << ',' << k << ','
               << d[((static_cast<int64_t>(g) * heads + h) * sq + q) * sk + k]
               << '\n';
  };
  for (size_t l = 0; l < scores.layers.size(); ++l) {
    dump(static_cast<int>(l), "spatial_self", scores.layers[l].spatial_self);
    dump(static_cast<int>(l), "spatial_cross", scores.layers[l].spatial_cross);
    dump(static_cast<int>(l), "temporal_self", scores.layers[l].temporal_self);
    dump(static_cast<int>(l), "temporal_cross", scores.layers[l].temporal_cross);
  }
}

}  // namespace mmca

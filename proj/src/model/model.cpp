#include "mmn/model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "mmn/optim.hpp"

namespace mmn {

using nlohmann::json;

std::size_t ModelConfig::dilation(std::size_t layer) const {
  if (layer < 1) throw std::invalid_argument("layers are numbered from 1");
  return dilated ? std::size_t{1} << (layer - 1) : 1;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("model config: " + what); };
  if (d_emb < 2) fail("d_emb must be at least 2");
  if (vocab_size <= kReservedTokens) fail("vocab_size must exceed the reserved tokens");
  if (kernel < 1 || kernel % 2 == 0) fail("kernel must be odd");
  if (encoder_layers < 1) fail("encoder_layers must be at least 1");
  if (decoder_layers < 1) fail("decoder_layers must be at least 1");
  if (encoder_layers > 32 || decoder_layers > 32) fail("at most 32 layers");
  if (memory_layers.empty()) fail("memory_layers must not be empty");
  for (std::size_t i = 0; i < memory_layers.size(); ++i) {
    if (memory_layers[i] < 1 || memory_layers[i] > encoder_layers) fail("memory layer outside [1, encoder_layers]");
    if (i > 0 && memory_layers[i] <= memory_layers[i - 1]) fail("memory_layers must be strictly ascending");
  }
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) fail("label_smoothing must lie in [0, 1)");
  if (max_document_len < 1) fail("max_document_len must be positive");
}

bool operator==(const ModelConfig& a, const ModelConfig& b) {
  return a.d_emb == b.d_emb && a.vocab_size == b.vocab_size && a.kernel == b.kernel &&
         a.encoder_layers == b.encoder_layers && a.decoder_layers == b.decoder_layers &&
         a.memory_layers == b.memory_layers && a.label_smoothing == b.label_smoothing &&
         a.output_bias == b.output_bias && a.train_embeddings == b.train_embeddings && a.dilated == b.dilated &&
         a.max_document_len == b.max_document_len;
}

std::string config_to_json(const ModelConfig& c) {
  json j = {{"d_emb", c.d_emb},
            {"vocab_size", c.vocab_size},
            {"kernel", c.kernel},
            {"encoder_layers", c.encoder_layers},
            {"decoder_layers", c.decoder_layers},
            {"memory_layers", c.memory_layers},
            {"label_smoothing", c.label_smoothing},
            {"output_bias", c.output_bias},
            {"train_embeddings", c.train_embeddings},
            {"dilated", c.dilated},
            {"max_document_len", c.max_document_len}};
  return j.dump();
}

ModelConfig config_from_json(std::string_view text, ModelConfig c) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("model config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("model config must be a JSON object");
  try {
    for (auto& [key, value] : j.items()) {
      if (key == "d_emb") c.d_emb = value.get<std::size_t>();
      else if (key == "vocab_size") c.vocab_size = value.get<std::size_t>();
      else if (key == "kernel") c.kernel = value.get<std::size_t>();
      else if (key == "encoder_layers") c.encoder_layers = value.get<std::size_t>();
      else if (key == "decoder_layers") c.decoder_layers = value.get<std::size_t>();
      else if (key == "memory_layers") c.memory_layers = value.get<std::vector<std::size_t>>();
      else if (key == "label_smoothing") c.label_smoothing = value.get<double>();
      else if (key == "output_bias") c.output_bias = value.get<bool>();
      else if (key == "train_embeddings") c.train_embeddings = value.get<bool>();
      else if (key == "dilated") c.dilated = value.get<bool>();
      else if (key == "max_document_len") c.max_document_len = value.get<std::size_t>();
      else throw std::invalid_argument("unknown model config key \"" + key + "\"");
    }
  } catch (const json::type_error& e) {
    throw std::invalid_argument(std::string("model config field has the wrong type: ") + e.what());
  }
  return c;
}

std::size_t receptive_field(std::size_t kernel, std::span<const std::size_t> dilations) {
  std::size_t rf = 1;
  for (auto d : dilations) rf += (kernel - 1) * d;
  return rf;
}

std::size_t receptive_field(const ModelConfig& config, std::size_t layer) {
  if (layer < 1 || layer > config.encoder_layers) throw std::invalid_argument("layer outside [1, encoder_layers]");
  std::vector<std::size_t> dilations;
  for (std::size_t l = 1; l <= layer; ++l) dilations.push_back(config.dilation(l));
  return receptive_field(config.kernel, dilations);
}

template <typename T>
Model<T>::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  const std::size_t d = config_.d_emb;
  const std::size_t k = config_.kernel;
  const std::size_t levels = config_.levels();
  // Reserve so that Parameter addresses stay fixed; tapes key on them.
  params_.reserve(1 + (config_.encoder_layers + config_.decoder_layers) * 10 + levels * 2 + 3);

  Rng rng(seed);
  emb_ = add_param("W_emb", xavier_init<T>({config_.vocab_size, d}, rng));

  auto add_layer = [&](const std::string& prefix) {
    LayerIndex layer{};
    for (auto [which, slot] : {std::pair{"filter", &layer.filter}, std::pair{"gate", &layer.gate}}) {
      const std::string p = prefix + "." + which;
      Tensor<T> v = xavier_init<T>({k, d, d}, rng);
      Tensor<T> g({d});
      for (std::size_t o = 0; o < d; ++o) {
        double norm = 0.0;
        for (std::size_t r = 0; r < k * d; ++r) norm += double(v[r * d + o]) * double(v[r * d + o]);
        g[o] = static_cast<T>(std::sqrt(norm));
      }
      slot->v = add_param(p + ".v", std::move(v));
      slot->g = add_param(p + ".g", std::move(g));
      slot->b = add_param(p + ".b", Tensor<T>({d}));
    }
    layer.gain = add_param(prefix + ".norm.gain", Tensor<T>({d}, T(1)));
    layer.bias = add_param(prefix + ".norm.bias", Tensor<T>({d}));
    return layer;
  };

  for (std::size_t l = 1; l <= config_.encoder_layers; ++l) encoder_.push_back(add_layer("enc." + std::to_string(l)));
  for (std::size_t l = 1; l <= config_.decoder_layers; ++l) {
    const std::string prefix = "dec." + std::to_string(l);
    LayerIndex layer = add_layer(prefix);
    layer.cond_f = add_param(prefix + ".W_f", xavier_init<T>({d, d}, rng));
    layer.cond_g = add_param(prefix + ".W_g", xavier_init<T>({d, d}, rng));
    decoder_.push_back(layer);
  }
  for (std::size_t s = 1; s <= levels; ++s) {
    const std::string prefix = "mem." + std::to_string(s);
    levels_.push_back({add_param(prefix + ".W_q", xavier_init<T>({d, d}, rng)), add_param(prefix + ".b_q", Tensor<T>({d}))});
  }

  Tensor<T> wo = xavier_init<T>({(levels + 1) * d, config_.vocab_size}, rng);
  Tensor<T> wo_g({config_.vocab_size});
  for (std::size_t o = 0; o < config_.vocab_size; ++o) {
    double norm = 0.0;
    for (std::size_t r = 0; r < (levels + 1) * d; ++r) norm += double(wo.at(r, o)) * double(wo.at(r, o));
    wo_g[o] = static_cast<T>(std::sqrt(norm));
  }
  wo_v_ = add_param("W_o.v", std::move(wo));
  wo_g_ = add_param("W_o.g", std::move(wo_g));
  if (config_.output_bias) bo_ = add_param("b_o", Tensor<T>({config_.vocab_size}));
}

template <typename T>
std::size_t Model<T>::add_param(std::string name, Tensor<T> value) {
  if (params_.size() == params_.capacity()) throw std::logic_error("parameter storage would reallocate");
  params_.push_back(Parameter<T>{std::move(name), std::move(value)});
  return params_.size() - 1;
}

template <typename T>
const Parameter<T>& Model<T>::parameter(std::string_view name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p;
  }
  throw std::out_of_range("no parameter named " + std::string(name));
}

template <typename T>
Parameter<T>& Model<T>::parameter(std::string_view name) {
  return const_cast<Parameter<T>&>(std::as_const(*this).parameter(name));
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
bool Model<T>::trainable(const Parameter<T>& p) const {
  return config_.train_embeddings || &p != &params_[emb_];
}

template <typename T>
ConvWeights<T> Model<T>::conv_vars(Tape<T>& tape, const ConvIndex& c) const {
  return {tape.param(params_[c.v]), tape.param(params_[c.g]), tape.param(params_[c.b])};
}

template <typename T>
Var<T> Model<T>::embed(Tape<T>& tape, std::span<const TokenId> ids, bool zero_pad) const {
  return embedding(tape.param(params_[emb_]), ids, zero_pad ? static_cast<std::int64_t>(kPadId) : -1);
}

template <typename T>
typename Model<T>::Encoded Model<T>::encode(Tape<T>& tape, std::span<const TokenId> document) const {
  if (document.empty()) throw std::invalid_argument("cannot encode an empty document");
  if (document.size() > config_.max_document_len) {
    throw std::invalid_argument("document of " + std::to_string(document.size()) + " tokens exceeds the cap of " +
                                std::to_string(config_.max_document_len));
  }
  Encoded out;
  out.length = document.size();
  out.pad = std::make_unique<bool[]>(document.size());
  bool all_pad = true;
  for (std::size_t i = 0; i < document.size(); ++i) {
    out.pad[i] = document[i] == kPadId;
    all_pad = all_pad && out.pad[i];
  }
  if (all_pad) throw std::invalid_argument("document consists only of padding");

  out.layers.push_back(embed(tape, document, true));
  for (std::size_t l = 0; l < encoder_.size(); ++l) {
    const LayerIndex& layer = encoder_[l];
    NormWeights<T> norm{tape.param(params_[layer.gain]), tape.param(params_[layer.bias])};
    out.layers.push_back(ngtu_block(out.layers.back(), conv_vars(tape, layer.filter), conv_vars(tape, layer.gate), norm,
                                    config_.dilation(l + 1), Padding::kSame));
  }
  out.whole = maxpool_time(out.layers.back());
  return out;
}

template <typename T>
std::vector<typename Model<T>::Memory> Model<T>::memories(const Encoded& encoded) const {
  std::vector<Memory> out;
  for (std::size_t m : config_.memory_layers) {
    const Var<T> level = encoded.layers.at(m);
    out.push_back({level, add(level, encoded.layers[0])});
  }
  return out;
}

template <typename T>
Var<T> Model<T>::decode(Tape<T>& tape, const Encoded& encoded, const std::vector<Memory>& memories,
                        std::span<const TokenId> inputs, bool last_only) const {
  if (inputs.empty()) throw std::invalid_argument("decoder needs at least the BOS input");
  if (memories.size() != levels_.size()) throw std::invalid_argument("memory level count mismatch");
  const std::size_t d = config_.d_emb;
  const Var<T> whole_row = reshape(encoded.whole, {1, d});

  Var<T> o = embed(tape, inputs, false);
  for (std::size_t l = 0; l < decoder_.size(); ++l) {
    const LayerIndex& layer = decoder_[l];
    const std::size_t dilation = config_.dilation(l + 1);
    auto conditioned = [&](std::size_t cond) {
      return add_row(o, reshape(matmul(whole_row, tape.param(params_[cond])), {d}));
    };
    const Var<T> hf = conv(conditioned(layer.cond_f), conv_vars(tape, layer.filter), dilation, Padding::kCausal);
    const Var<T> hg = conv(conditioned(layer.cond_g), conv_vars(tape, layer.gate), dilation, Padding::kCausal);
    const Var<T> gated = mul(tanh(hf), sigmoid(hg));
    o = layer_norm(add(o, gated), tape.param(params_[layer.gain]), tape.param(params_[layer.bias]));
  }
  if (last_only) o = slice_rows(o, inputs.size() - 1, 1);

  std::vector<Var<T>> parts;
  for (std::size_t s = 0; s < levels_.size(); ++s) {
    const Var<T> q = tanh(add_row(matmul(o, tape.param(params_[levels_[s].wq])), tape.param(params_[levels_[s].bq])));
    parts.push_back(attend(q, memories[s].input, memories[s].output, encoded.pad_mask()));
  }
  parts.push_back(o);
  const Var<T> features = concat_columns<T>(parts);
  const Var<T> wo = weight_norm(tape.param(params_[wo_v_]), tape.param(params_[wo_g_]));
  Var<T> logits = matmul(features, wo);
  if (config_.output_bias) logits = add_row(logits, tape.param(params_[bo_]));
  return logits;
}

namespace {

std::vector<TokenId> shifted_inputs(std::span<const TokenId> summary) {
  std::vector<TokenId> in;
  in.reserve(summary.size());
  in.push_back(kBosId);
  for (std::size_t i = 0; i + 1 < summary.size(); ++i) in.push_back(summary[i]);
  return in;
}

}  // namespace

template <typename T>
Var<T> Model<T>::forward(Tape<T>& tape, std::span<const TokenId> document, std::span<const TokenId> summary) const {
  if (summary.empty()) throw std::invalid_argument("summary must contain at least EOS");
  const Encoded enc = encode(tape, document);
  const auto mem = memories(enc);
  const auto inputs = shifted_inputs(summary);
  return decode(tape, enc, mem, inputs);
}

template <typename T>
Var<T> Model<T>::loss(Tape<T>& tape, std::span<const TokenId> document, std::span<const TokenId> summary,
                      double epsilon) const {
  return label_smoothed_loss(forward(tape, document, summary), summary, epsilon);
}

template <typename T>
std::vector<TokenId> Model<T>::greedy_decode(std::span<const TokenId> document, std::size_t max_len) const {
  if (max_len < 1) throw std::invalid_argument("max_len must be at least 1");
  Tape<T> tape(false);
  const Encoded enc = encode(tape, document);
  const auto mem = memories(enc);
  const std::size_t start = tape.mark();
  std::vector<TokenId> inputs = {kBosId};
  for (std::size_t step = 0; step < max_len; ++step) {
    tape.rewind(start);
    const Tensor<T>& logits = decode(tape, enc, mem, inputs, true).value();
    TokenId best = 0;
    for (TokenId v = 1; v < logits.size(); ++v) {
      if (logits[v] > logits[best]) best = v;
    }
    if (best == kEosId) break;
    inputs.push_back(best);
  }
  std::vector<TokenId> out;
  for (std::size_t i = 1; i < inputs.size(); ++i) {
    if (inputs[i] != kBosId) out.push_back(inputs[i]);
  }
  return out;
}

template <typename T>
std::size_t Model<T>::load_pretrained_embeddings(std::istream& in, const Vocabulary& vocab) {
  if (vocab.size() != config_.vocab_size) throw std::invalid_argument("vocabulary size differs from the model");
  Tensor<T>& table = params_[emb_].value;
  const std::size_t d = config_.d_emb;
  std::string line;
  std::size_t line_no = 0;
  std::size_t copied = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::string token;
    if (!(fields >> token)) continue;
    std::vector<double> values;
    for (double v; fields >> v;) values.push_back(v);
    if (!fields.eof()) throw std::invalid_argument("embedding line " + std::to_string(line_no) + ": bad number");
    // fastText text files open with a "<count> <dim>" header.
    if (line_no == 1 && values.size() == 1 && std::all_of(token.begin(), token.end(), ::isdigit)) continue;
    if (values.size() != d) {
      throw std::invalid_argument("embedding line " + std::to_string(line_no) + ": dimension " +
                                  std::to_string(values.size()) + " differs from d_emb " + std::to_string(d));
    }
    if (!vocab.contains(token)) continue;
    const TokenId id = vocab.id(token);
    for (std::size_t c = 0; c < d; ++c) table[id * d + c] = static_cast<T>(values[c]);
    ++copied;
  }
  return copied;
}

namespace {

constexpr std::array<char, 4> kMagic = {'M', 'M', 'N', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                                 static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  out.write(b.data(), 4);
}

// False on clean EOF before the first byte.
bool get_u32(std::istream& in, std::uint32_t& v, bool eof_ok = false) {
  std::array<unsigned char, 4> b{};
  in.read(reinterpret_cast<char*>(b.data()), 4);
  if (in.gcount() == 0 && eof_ok && in.eof()) return false;
  if (in.gcount() != 4) throw CheckpointError("checkpoint truncated");
  v = std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
  return true;
}

std::uint32_t narrow(std::size_t v) {
  if (v > 0xFFFFFFFFu) throw CheckpointError("value does not fit a 32-bit checkpoint field");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

template <typename T>
void Model<T>::save(std::ostream& out) const {
  out.write(kMagic.data(), kMagic.size());
  const std::string config = config_to_json(config_);
  put_u32(out, narrow(config.size()));
  out.write(config.data(), static_cast<std::streamsize>(config.size()));
  for (const auto& p : params_) {
    put_u32(out, narrow(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put_u32(out, narrow(p.value.rank()));
    for (auto extent : p.value.shape()) put_u32(out, narrow(extent));
    for (T v : p.value.data()) {
      const float f = static_cast<float>(v);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_u32(out, bits);
    }
  }
  if (!out) throw CheckpointError("failed to write checkpoint");
}

template <typename T>
void Model<T>::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  save(out);
}

template <typename T>
Model<T> Model<T>::load(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  if (in.gcount() != 4 || magic != kMagic) throw CheckpointError("not a checkpoint: bad magic bytes");
  std::uint32_t len = 0;
  get_u32(in, len);
  std::string text(len, '\0');
  in.read(text.data(), len);
  if (static_cast<std::uint32_t>(in.gcount()) != len) throw CheckpointError("checkpoint truncated in config");
  ModelConfig config;
  try {
    config = config_from_json(text);
    config.validate();
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint config: ") + e.what());
  }

  Model model(config, 0);
  std::vector<bool> seen(model.params_.size(), false);
  std::uint32_t name_len = 0;
  while (get_u32(in, name_len, true)) {
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (static_cast<std::uint32_t>(in.gcount()) != name_len) throw CheckpointError("checkpoint truncated in name");
    auto it = std::find_if(model.params_.begin(), model.params_.end(), [&](const auto& p) { return p.name == name; });
    if (it == model.params_.end()) throw CheckpointError("unexpected tensor " + name);
    const auto index = static_cast<std::size_t>(it - model.params_.begin());
    if (seen[index]) throw CheckpointError("duplicate tensor " + name);
    seen[index] = true;
    std::uint32_t rank = 0;
    get_u32(in, rank);
    Shape shape(rank);
    for (auto& extent : shape) {
      std::uint32_t e = 0;
      get_u32(in, e);
      extent = e;
    }
    if (shape != it->value.shape()) {
      throw CheckpointError("tensor " + name + " has shape " + shape_string(shape) + ", config expects " +
                            shape_string(it->value.shape()));
    }
    for (T& v : it->value.values()) {
      std::uint32_t bits = 0;
      get_u32(in, bits);
      float f;
      std::memcpy(&f, &bits, 4);
      v = static_cast<T>(f);
    }
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (!seen[i]) throw CheckpointError("checkpoint lacks tensor " + model.params_[i].name);
  }
  return model;
}

template <typename T>
Model<T> Model<T>::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  return load(in);
}

template class Model<float>;
template class Model<double>;

}  // namespace mmn

#include "contactlab/encoder.hpp"

#include <algorithm>

namespace contactlab::encoder {

void EncoderConfig::validate() const {
  if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
    throw ConfigError("encoder: image_size " + std::to_string(image_size) +
                      " must be a positive multiple of patch_size " + std::to_string(patch_size));
  }
  if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0) {
    throw ConfigError("encoder: embed_dim " + std::to_string(embed_dim) +
                      " must be divisible by heads " + std::to_string(heads));
  }
  if (mlp_ratio == 0) throw ConfigError("encoder: mlp_ratio must be positive");
}

const char* branch_name(Branch b) {
  switch (b) {
    case Branch::scene: return "scene";
    case Branch::part: return "part";
    case Branch::contact: return "contact";
  }
  return "?";
}

LoraAdapter LoraAdapter::create(std::size_t d_in, std::size_t d_out, const LoraConfig& cfg,
                                Rng& rng) {
  if (cfg.rank == 0 || cfg.rank > std::min(d_in, d_out)) {
    throw ConfigError("lora: rank " + std::to_string(cfg.rank) + " invalid for a " +
                      std::to_string(d_in) + "->" + std::to_string(d_out) + " projection");
  }
  if (!(cfg.alpha > 0.0)) throw ConfigError("lora: alpha must be positive");
  LoraAdapter a;
  a.rank = cfg.rank;
  a.alpha = cfg.alpha;
  a.down = make_gaussian({cfg.rank, d_in}, cfg.init_std, rng);
  a.up = nd::DiffArray::zeros({d_out, cfg.rank}, true);
  a.enabled = cfg.enabled;
  return a;
}

nd::DiffArray patchify(const nd::DiffArray& image, const EncoderConfig& cfg) {
  cfg.validate();
  const std::size_t s = cfg.image_size, p = cfg.patch_size;
  if (image.rank() != 3 || image.dim(0) != s || image.dim(1) != s || image.dim(2) != 3) {
    throw ConfigError("patchify: expected a " + std::to_string(s) + "x" + std::to_string(s) +
                      "x3 image, got " + nd::shape_string(image.shape()));
  }
  const std::size_t g = cfg.grid();
  std::vector<std::size_t> idx;
  idx.reserve(image.size());
  for (std::size_t pr = 0; pr < g; ++pr)
    for (std::size_t pc = 0; pc < g; ++pc)
      for (std::size_t y = 0; y < p; ++y)
        for (std::size_t x = 0; x < p; ++x)
          for (std::size_t c = 0; c < 3; ++c) idx.push_back(((pr * p + y) * s + pc * p + x) * 3 + c);
  return nd::gather(image, std::move(idx), {g * g, cfg.patch_dim()});
}

nd::DiffArray lora_linear(const nd::DiffArray& x, const nd::DiffArray& weight,
                          const nd::DiffArray& bias, const LoraAdapter& adapter) {
  if (weight.rank() != 2 || x.rank() != 2 || x.dim(1) != weight.dim(1)) {
    throw DimensionError("lora_linear: input " + nd::shape_string(x.shape()) +
                         " does not match weight " + nd::shape_string(weight.shape()));
  }
  if (!adapter.enabled) return nd::linear(x, weight, bias);

  const std::size_t d_in = weight.dim(1), d_out = weight.dim(0);
  if (adapter.rank == 0 || adapter.rank > std::min(d_in, d_out)) {
    throw ConfigError("lora_linear: rank " + std::to_string(adapter.rank) + " exceeds min(" +
                      std::to_string(d_in) + ", " + std::to_string(d_out) + ")");
  }
  if (adapter.down.shape() != nd::Shape{adapter.rank, d_in} ||
      adapter.up.shape() != nd::Shape{d_out, adapter.rank}) {
    throw DimensionError("lora_linear: adapter factors " + nd::shape_string(adapter.down.shape()) +
                         "/" + nd::shape_string(adapter.up.shape()) + " do not fit weight " +
                         nd::shape_string(weight.shape()));
  }
  auto base = nd::linear(x, weight.detach(), bias.detach());
  auto low = nd::matmul(nd::matmul(x, nd::transpose(adapter.down)), nd::transpose(adapter.up));
  return nd::add(base, nd::scale(low, adapter.scaling()));
}

namespace {

AdaptedLinear make_adapted(std::size_t in, std::size_t out, const LoraConfig& lora, Rng& base_rng,
                           Rng& lora_rng) {
  AdaptedLinear l;
  l.base = make_linear(in, out, base_rng);
  l.adapter = LoraAdapter::create(in, out, lora, lora_rng);
  return l;
}

void register_adapted(ParamStore& store, const std::string& name, const std::string& sub,
                      const AdaptedLinear& l) {
  register_linear(store, name + "." + sub, l.base);
  store.add(std::string(kLoraPrefix) + name + "." + sub + ".A", l.adapter.down);
  store.add(std::string(kLoraPrefix) + name + "." + sub + ".B", l.adapter.up);
}

}  // namespace

PatchEncoder::PatchEncoder(const EncoderConfig& cfg, const LoraConfig& lora, Rng& base_rng,
                           Rng& lora_rng)
    : cfg_(cfg) {
  cfg_.validate();
  const std::size_t d = cfg_.embed_dim, hidden = cfg_.embed_dim * cfg_.mlp_ratio;
  embed_ = make_adapted(cfg_.patch_dim(), d, lora, base_rng, lora_rng);
  pos_ = make_gaussian({cfg_.num_patches(), d}, 0.02, base_rng);
  for (std::size_t b = 0; b < cfg_.depth; ++b) {
    EncoderBlock block;
    block.ln1 = make_layer_norm(d);
    block.ln2 = make_layer_norm(d);
    block.q = make_adapted(d, d, lora, base_rng, lora_rng);
    block.k = make_adapted(d, d, lora, base_rng, lora_rng);
    block.v = make_adapted(d, d, lora, base_rng, lora_rng);
    block.proj = make_adapted(d, d, lora, base_rng, lora_rng);
    block.fc1 = make_adapted(d, hidden, lora, base_rng, lora_rng);
    block.fc2 = make_adapted(hidden, d, lora, base_rng, lora_rng);
    blocks_.push_back(std::move(block));
  }
  set_lora_enabled(lora.enabled);
}

FeatureMap PatchEncoder::encode(const nd::DiffArray& image, Branch branch) const {
  auto x = nd::add(embed_(patchify(image, cfg_)), pos_);
  for (const auto& blk : blocks_) {
    auto h = apply(blk.ln1, x);
    auto att = nd::multi_head_attention(blk.q(h), blk.k(h), blk.v(h), cfg_.heads);
    x = nd::add(x, blk.proj(att));
    auto h2 = apply(blk.ln2, x);
    x = nd::add(x, blk.fc2(nd::gelu(blk.fc1(h2))));
  }
  return {x, branch};
}

std::vector<AdaptedLinear*> PatchEncoder::projections() {
  std::vector<AdaptedLinear*> out{&embed_};
  for (auto& b : blocks_) {
    for (auto* l : {&b.q, &b.k, &b.v, &b.proj, &b.fc1, &b.fc2}) out.push_back(l);
  }
  return out;
}

std::vector<const AdaptedLinear*> PatchEncoder::projections() const {
  std::vector<const AdaptedLinear*> out{&embed_};
  for (const auto& b : blocks_) {
    for (const auto* l : {&b.q, &b.k, &b.v, &b.proj, &b.fc1, &b.fc2}) out.push_back(l);
  }
  return out;
}

void PatchEncoder::register_params(ParamStore& store, const std::string& name) const {
  register_adapted(store, name, "embed", embed_);
  store.add(name + ".pos", pos_);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto& b = blocks_[i];
    const std::string p = name + ".blocks." + std::to_string(i);
    register_layer_norm(store, p + ".ln1", b.ln1);
    register_layer_norm(store, p + ".ln2", b.ln2);
    register_adapted(store, p, "attn.q", b.q);
    register_adapted(store, p, "attn.k", b.k);
    register_adapted(store, p, "attn.v", b.v);
    register_adapted(store, p, "attn.proj", b.proj);
    register_adapted(store, p, "mlp.fc1", b.fc1);
    register_adapted(store, p, "mlp.fc2", b.fc2);
  }
}

void PatchEncoder::set_lora_enabled(bool enabled) {
  lora_enabled_ = enabled;
  const bool base_trainable = !enabled;
  for (auto* l : projections()) {
    l->adapter.enabled = enabled;
    l->adapter.down.set_requires_grad(enabled);
    l->adapter.up.set_requires_grad(enabled);
    l->base.weight.set_requires_grad(base_trainable);
    l->base.bias.set_requires_grad(base_trainable);
  }
  pos_.set_requires_grad(base_trainable);
  for (auto& b : blocks_) {
    for (auto* ln : {&b.ln1, &b.ln2}) {
      ln->gain.set_requires_grad(base_trainable);
      ln->bias.set_requires_grad(base_trainable);
    }
  }
}

BranchEncoders::BranchEncoders(const EncoderConfig& cfg, const LoraConfig& lora, Rng& base_rng,
                               Rng& lora_rng) {
  scene_ = std::make_unique<PatchEncoder>(cfg, lora, base_rng, lora_rng);
  if (!cfg.shared_branches) part_ = std::make_unique<PatchEncoder>(cfg, lora, base_rng, lora_rng);
}

FeatureMap BranchEncoders::encode(const nd::DiffArray& image, Branch branch) const {
  const PatchEncoder& enc = (branch == Branch::part && part_) ? *part_ : *scene_;
  return enc.encode(image, branch);
}

void BranchEncoders::register_params(ParamStore& store) const {
  if (!part_) {
    scene_->register_params(store, "encoder");
    return;
  }
  scene_->register_params(store, "scene_encoder");
  part_->register_params(store, "part_encoder");
}

void BranchEncoders::set_lora_enabled(bool enabled) {
  scene_->set_lora_enabled(enabled);
  if (part_) part_->set_lora_enabled(enabled);
}

}  // namespace contactlab::encoder

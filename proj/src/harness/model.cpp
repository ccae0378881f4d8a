#include "contactlab/harness/model.hpp"

namespace contactlab::harness {

ContactModel::ContactModel(const ExperimentConfig& cfg)
    : cfg_(cfg),
      base_rng_(Rng(cfg.optimizer.seed).split(1)),
      lora_rng_(Rng(cfg.optimizer.seed).split(2)),
      encoders_((cfg.validate(), cfg.encoder), cfg.lora, base_rng_, lora_rng_) {
  const std::size_t d = cfg_.encoder.embed_dim;
  scene_decoder_ = heads::make_seg_decoder(d, heads::SegKind::scene, cfg_.heads, base_rng_);
  part_decoder_ = heads::make_seg_decoder(d, heads::SegKind::part, cfg_.heads, base_rng_);
  fuse_ln_ = make_layer_norm(d);
  pool_query_ = fusion::PoolQuery::zeros(d);
  contact_head_ = heads::make_contact_head(d, cfg_.heads, base_rng_);
  vertex_expand_ = heads::make_vertex_expand(d, cfg_.heads, base_rng_);
  semantic_head_ = heads::make_semantic_head(cfg_.heads, base_rng_);

  encoders_.register_params(store_);
  register_linear(store_, "decoder.scene", scene_decoder_);
  register_linear(store_, "decoder.part", part_decoder_);
  register_layer_norm(store_, "fusion.ln", fuse_ln_);
  if (cfg_.pooling == PoolingMode::attention) {
    store_.add("fusion.pool_query", pool_query_.q);
  } else {
    pool_query_.q.set_requires_grad(false);
  }
  register_linear(store_, "contact_head.fc1", contact_head_.fc1);
  register_linear(store_, "contact_head.fc2", contact_head_.fc2);
  register_linear(store_, "vertex_expand.proj", vertex_expand_.proj);
  store_.add("vertex_expand.table", vertex_expand_.table);
  register_linear(store_, "semantic_head.fc1", semantic_head_.fc1);
  register_linear(store_, "semantic_head.fc2", semantic_head_.fc2);
}

ForwardOutput ContactModel::forward(const nd::DiffArray& image, const ForwardOptions& opts) const {
  ForwardOutput out;
  out.f_s = encoders_.encode(image, encoder::Branch::scene);
  out.f_p = encoders_.encode(image, encoder::Branch::part);
  out.scene_seg = heads::seg_decoder(out.f_s, heads::SegKind::scene, scene_decoder_);
  out.part_seg = heads::seg_decoder(out.f_p, heads::SegKind::part, part_decoder_);

  auto scene = out.f_s;
  if (const auto k = opts.zero_out_k ? opts.zero_out_k : cfg_.fusion.zero_out_k) {
    scene = fusion::zero_out_channels(scene, *k);
  }
  const fusion::AttentionConfig att{cfg_.fusion.scale, cfg_.fusion.heads, cfg_.fusion.mode};
  const auto s_att = fusion::cross_attend(out.f_p, scene, att);
  const auto p_att = fusion::cross_attend(scene, out.f_p, att);
  out.f_c = fusion::fuse(s_att, p_att, fuse_ln_);
  out.pooled = cfg_.pooling == PoolingMode::attention ? fusion::attention_pool(out.f_c, pool_query_)
                                                      : fusion::mean_pool(out.f_c);

  out.prediction.contact_prob = heads::contact_head(out.pooled, contact_head_);
  auto sem = heads::semantic_head(heads::vertex_feature_expand(out.pooled, vertex_expand_), semantic_head_);
  out.prediction.semantic_logits = sem.logits;
  out.prediction.semantic_prob = sem.probs;
  return out;
}

}  // namespace contactlab::harness

#include "userllm/encoder/encoder.hpp"

#include <numeric>
#include <stdexcept>

namespace userllm {

std::vector<int> modality_slice_widths(int d_model, int modalities) {
  if (modalities < 1) throw std::invalid_argument("at least one modality is required");
  if (d_model < modalities) throw std::invalid_argument("d_model must be >= the number of modalities");
  std::vector<int> widths(static_cast<std::size_t>(modalities), d_model / modalities);
  for (int m = 0; m < d_model % modalities; ++m) ++widths[static_cast<std::size_t>(m)];
  return widths;
}

namespace {

void validate_common(int layers, int d_model, int heads, const std::vector<int>& vocab_sizes, int max_seq_len) {
  if (layers < 1) throw std::invalid_argument("encoder.layers must be >= 1");
  if (heads < 1 || d_model % heads != 0) throw std::invalid_argument("encoder.d_model must be divisible by encoder.heads");
  if (vocab_sizes.empty()) throw std::invalid_argument("encoder needs at least one modality vocabulary");
  if (d_model < static_cast<int>(vocab_sizes.size())) {
    throw std::invalid_argument("encoder.d_model must be >= the number of modalities");
  }
  for (int v : vocab_sizes) {
    if (v < 2) throw std::invalid_argument("every modality vocabulary needs at least PAD and UNK");
  }
  if (max_seq_len < 1) throw std::invalid_argument("encoder.max_seq_len must be >= 1");
}

template <typename Scalar>
TensorPtr<Scalar> make_embedding(ParameterSet<Scalar>& params, const std::string& name, int rows, int cols,
                                  Rng& rng) {
  Matrix<Scalar> init = normal_matrix<Scalar>(rows, cols, kInitStd, rng);
  init.row(Vocabulary::kPad).setZero();
  return params.add(name, std::move(init));
}

template <typename Scalar>
std::vector<int> column(std::span<const FeatureIds> events, std::size_t modality) {
  std::vector<int> ids;
  ids.reserve(events.size());
  for (const auto& e : events) {
    if (modality >= e.size()) throw std::invalid_argument("event is missing the id of modality " + std::to_string(modality));
    ids.push_back(e[modality]);
  }
  return ids;
}

}  // namespace

void validate(const AREncoderConfig& c) { validate_common(c.layers, c.d_model, c.heads, c.vocab_sizes, c.max_seq_len); }

void validate(const DualEncoderConfig& c) {
  validate_common(c.layers, c.d_model, c.heads, c.vocab_sizes, c.max_seq_len);
  if (c.num_outputs < 1) throw std::invalid_argument("dual encoder num_outputs must be >= 1");
  if (c.fusion == DualFusion::kMean && c.num_outputs != 1) {
    throw std::invalid_argument("dual encoder mean fusion emits exactly one embedding");
  }
  if (c.fusion_hidden < 1) throw std::invalid_argument("dual encoder fusion_hidden must be >= 1");
}

// ---- ArEncoder ------------------------------------------------------------

template <typename Scalar>
ArEncoder<Scalar>::ArEncoder(const AREncoderConfig& config, ParameterSet<Scalar>& params, Rng& rng,
                             const std::string& prefix)
    : config_(config) {
  validate(config_);
  widths_ = modality_slice_widths(config_.d_model, static_cast<int>(config_.vocab_sizes.size()));
  for (std::size_t m = 0; m < config_.vocab_sizes.size(); ++m) {
    tables_.push_back(make_embedding(params, prefix + ".embed." + std::to_string(m), config_.vocab_sizes[m],
                                      widths_[m], rng));
  }
  positions_ = params.add(prefix + ".positions", normal_matrix<Scalar>(config_.max_seq_len, config_.d_model, kInitStd, rng));
  for (int l = 0; l < config_.layers; ++l) {
    blocks_.emplace_back(params, prefix + ".layers." + std::to_string(l), config_.d_model, config_.heads, rng);
  }
  final_norm_ = LayerNorm<Scalar>(params, prefix + ".ln_final", config_.d_model);
}

template <typename Scalar>
Var<Scalar> ArEncoder<Scalar>::fuse_early(Graph<Scalar>& g, const FeatureIds& ids) const {
  return fuse_early(g, std::span<const FeatureIds>(&ids, 1));
}

template <typename Scalar>
Var<Scalar> ArEncoder<Scalar>::fuse_early(Graph<Scalar>& g, std::span<const FeatureIds> events) const {
  std::vector<Var<Scalar>> parts;
  for (std::size_t m = 0; m < tables_.size(); ++m) {
    const std::vector<int> ids = column<Scalar>(events, m);
    parts.push_back(gather_rows(g.parameter(tables_[m]), std::span<const int>(ids)));
  }
  return concat_cols(std::span<const Var<Scalar>>(parts));
}

template <typename Scalar>
Var<Scalar> ArEncoder<Scalar>::encode(Graph<Scalar>& g, std::span<const FeatureIds> events) const {
  const auto length = static_cast<Eigen::Index>(events.size());
  if (length == 0) throw std::invalid_argument("ar_encode: empty window");
  if (length > config_.max_seq_len) {
    throw std::invalid_argument("ar_encode: window of " + std::to_string(length) + " exceeds max_seq_len " +
                                std::to_string(config_.max_seq_len));
  }
  Var<Scalar> x = add(fuse_early(g, events), slice_rows(g.parameter(positions_), 0, length));
  const std::optional<BoolMatrix> mask = causal_mask(length);
  for (const auto& block : blocks_) x = block(g, x, mask);
  return final_norm_(g, x);
}

template <typename Scalar>
UserEmbeddings<Scalar> ArEncoder<Scalar>::embed(Graph<Scalar>& g, std::span<const FeatureIds> events) const {
  return {encode(g, events), Provenance::kAutoregressive};
}

template <typename Scalar>
Var<Scalar> ArEncoder<Scalar>::pretrain_loss(Graph<Scalar>& g, std::span<const FeatureIds> events) const {
  const auto length = static_cast<Eigen::Index>(events.size());
  if (length < 2) throw std::invalid_argument("ar_pretrain_loss: needs at least 2 events");
  Var<Scalar> hidden = slice_rows(encode(g, events), 0, length - 1);
  std::vector<Var<Scalar>> losses;
  Eigen::Index offset = 0;
  for (std::size_t m = 0; m < tables_.size(); ++m) {
    Var<Scalar> slice = slice_cols(hidden, offset, widths_[m]);
    Var<Scalar> logits = matmul_transposed(slice, g.parameter(tables_[m]));
    const std::vector<int> targets = column<Scalar>(events.subspan(1), m);
    losses.push_back(cross_entropy(logits, std::span<const int>(targets)));
    offset += widths_[m];
  }
  return mean(std::span<const Var<Scalar>>(losses));
}

// ---- LateFusion -----------------------------------------------------------

template <typename Scalar>
LateFusion<Scalar>::LateFusion(ParameterSet<Scalar>& params, const std::string& name, int modalities, int width,
                               int hidden, int outputs, Rng& rng)
    : in_(params, name + ".in", modalities * width, hidden, rng),
      out_(params, name + ".out", hidden, outputs * width, rng),
      modalities_(modalities),
      width_(width),
      outputs_(outputs) {}

template <typename Scalar>
Var<Scalar> LateFusion<Scalar>::operator()(Graph<Scalar>& g, std::span<const Var<Scalar>> pooled) const {
  if (static_cast<int>(pooled.size()) != modalities_) {
    throw std::invalid_argument("late_fuse: expected " + std::to_string(modalities_) + " modality encodings");
  }
  for (const auto& p : pooled) {
    if (p.rows() != 1 || p.cols() != width_) {
      throw std::invalid_argument("late_fuse: every modality encoding must be [1," + std::to_string(width_) + "]");
    }
  }
  Var<Scalar> joined = concat_cols(pooled);
  return reshape(out_(g, gelu(in_(g, joined))), outputs_, width_);
}

// ---- DualEncoder ----------------------------------------------------------

template <typename Scalar>
typename DualEncoder<Scalar>::Tower DualEncoder<Scalar>::make_tower(ParameterSet<Scalar>& params,
                                                                    const std::string& name, std::vector<int> vocab,
                                                                    std::vector<int> widths, Rng& rng) const {
  Tower tower;
  for (std::size_t m = 0; m < vocab.size(); ++m) {
    tower.tables.push_back(make_embedding(params, name + ".embed." + std::to_string(m), vocab[m], widths[m], rng));
  }
  tower.positions = params.add(name + ".positions", normal_matrix<Scalar>(config_.max_seq_len, config_.d_model, kInitStd, rng));
  for (int l = 0; l < config_.layers; ++l) {
    tower.blocks.emplace_back(params, name + ".layers." + std::to_string(l), config_.d_model, config_.heads, rng);
  }
  tower.final_norm = LayerNorm<Scalar>(params, name + ".ln_final", config_.d_model);
  return tower;
}

template <typename Scalar>
DualEncoder<Scalar>::DualEncoder(const DualEncoderConfig& config, ParameterSet<Scalar>& params, Rng& rng,
                                 const std::string& prefix)
    : config_(config) {
  validate(config_);
  const int modalities = static_cast<int>(config_.vocab_sizes.size());
  if (config_.fusion == DualFusion::kMean) {
    towers_.push_back(make_tower(params, prefix + ".user", config_.vocab_sizes,
                                 modality_slice_widths(config_.d_model, modalities), rng));
  } else {
    for (int m = 0; m < modalities; ++m) {
      towers_.push_back(make_tower(params, prefix + ".user." + std::to_string(m),
                                   {config_.vocab_sizes[static_cast<std::size_t>(m)]}, {config_.d_model}, rng));
    }
    late_fusion_ = LateFusion<Scalar>(params, prefix + ".fusion", modalities, config_.d_model, config_.fusion_hidden,
                                      config_.num_outputs, rng);
  }
  label_table_ = make_embedding(params, prefix + ".label.embed", config_.vocab_sizes.front(), config_.d_model, rng);
  log_tau_ = params.add(prefix + ".log_tau", zeros<Scalar>(1, 1));
}

template <typename Scalar>
Var<Scalar> DualEncoder<Scalar>::run_tower(Graph<Scalar>& g, const Tower& tower, std::span<const FeatureIds> events,
                                           std::span<const std::size_t> modalities) const {
  const auto length = static_cast<Eigen::Index>(events.size());
  if (length == 0) throw std::invalid_argument("dual_encode: empty window");
  if (length > config_.max_seq_len) throw std::invalid_argument("dual_encode: window exceeds max_seq_len");
  std::vector<Var<Scalar>> parts;
  for (std::size_t i = 0; i < modalities.size(); ++i) {
    const std::vector<int> ids = column<Scalar>(events, modalities[i]);
    parts.push_back(gather_rows(g.parameter(tower.tables[i]), std::span<const int>(ids)));
  }
  Var<Scalar> x = add(concat_cols(std::span<const Var<Scalar>>(parts)), slice_rows(g.parameter(tower.positions), 0, length));
  for (const auto& block : tower.blocks) x = block(g, x, std::nullopt);
  return tower.final_norm(g, x);
}

template <typename Scalar>
Var<Scalar> DualEncoder<Scalar>::user_tower(Graph<Scalar>& g, std::span<const FeatureIds> events) const {
  if (config_.fusion == DualFusion::kMean) {
    std::vector<std::size_t> all(config_.vocab_sizes.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return mean_rows(run_tower(g, towers_.front(), events, all));
  }
  std::vector<Var<Scalar>> pooled;
  for (std::size_t m = 0; m < towers_.size(); ++m) {
    const std::size_t only[] = {m};
    pooled.push_back(mean_rows(run_tower(g, towers_[m], events, only)));
  }
  return late_fusion_(g, std::span<const Var<Scalar>>(pooled));
}

template <typename Scalar>
Var<Scalar> DualEncoder<Scalar>::label_tower(Graph<Scalar>& g, std::span<const int> name_ids) const {
  return gather_rows(g.parameter(label_table_), name_ids);
}

template <typename Scalar>
typename DualEncoder<Scalar>::Encoded DualEncoder<Scalar>::dual_encode(Graph<Scalar>& g,
                                                                       std::span<const FeatureIds> events,
                                                                       std::span<const int> candidates) const {
  return {user_tower(g, events), label_tower(g, candidates)};
}

template <typename Scalar>
UserEmbeddings<Scalar> DualEncoder<Scalar>::embed(Graph<Scalar>& g, std::span<const FeatureIds> events) const {
  return {user_tower(g, events), Provenance::kDual};
}

template <typename Scalar>
Var<Scalar> DualEncoder<Scalar>::similarity(Graph<Scalar>& g, std::span<const Example> batch) const {
  std::vector<Var<Scalar>> users;
  std::vector<int> labels;
  for (const auto& ex : batch) {
    users.push_back(mean_rows(user_tower(g, ex.events)));
    labels.push_back(ex.next_name_id);
  }
  Var<Scalar> u = concat_rows(std::span<const Var<Scalar>>(users));
  Var<Scalar> l = label_tower(g, std::span<const int>(labels));
  return divide_by(matmul_transposed(u, l), exp(g.parameter(log_tau_)));
}

template <typename Scalar>
Var<Scalar> DualEncoder<Scalar>::pretrain_loss(Graph<Scalar>& g, std::span<const Example> batch) const {
  if (batch.size() < 2) throw std::invalid_argument("dual_pretrain_loss: batch size must be >= 2");
  Var<Scalar> logits = similarity(g, batch);
  std::vector<int> targets(batch.size());
  std::iota(targets.begin(), targets.end(), 0);
  return cross_entropy(logits, std::span<const int>(targets));
}

template class ArEncoder<float>;
template class ArEncoder<double>;
template class LateFusion<float>;
template class LateFusion<double>;
template class DualEncoder<float>;
template class DualEncoder<double>;

}  // namespace userllm

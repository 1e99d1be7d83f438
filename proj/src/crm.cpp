#include "corella/crm.hpp"

#include <cmath>
#include <stdexcept>

namespace corella {

namespace {
ad::Tensor glorot(std::vector<int> shape, Rng& rng) {
  const double fan_in = shape.size() == 2 ? shape[0] : shape[0];
  const double fan_out = shape.size() == 2 ? shape[1] : 1;
  const double stddev = std::sqrt(2.0 / (fan_in + fan_out));
  return ad::Tensor::randn(std::move(shape), rng, stddev);
}
}  // namespace

CrmModel::CrmModel(std::vector<int> field_cardinalities, std::vector<std::string> field_names,
                   CrmConfig cfg, std::uint64_t seed)
    : cfg_(std::move(cfg)),
      cardinalities_(std::move(field_cardinalities)),
      field_names_(std::move(field_names)) {
  if (cardinalities_.empty()) throw std::invalid_argument("CrmModel: no fields");
  if (field_names_.size() != cardinalities_.size()) {
    throw std::invalid_argument("CrmModel: field name/cardinality count mismatch");
  }
  if (cfg_.d_emb <= 0 || cfg_.cross_layers < 0) {
    throw std::invalid_argument("CrmModel: bad config");
  }
  input_dim_ = static_cast<int>(cardinalities_.size()) * cfg_.d_emb;

  Rng rng(seed);
  for (int card : cardinalities_) {
    embeddings_.push_back(ad::Tensor::randn({card, cfg_.d_emb}, rng, 0.05));
  }
  for (int l = 0; l < cfg_.cross_layers; ++l) {
    cross_w_.push_back(glorot({input_dim_, input_dim_}, rng));
    cross_b_.push_back(ad::Tensor::zeros({input_dim_}, true));
  }
  int width = input_dim_;
  for (int w : cfg_.deep_widths) {
    if (w <= 0) throw std::invalid_argument("CrmModel: bad deep tower width");
    deep_w_.push_back(ad::Tensor::randn({width, w}, rng, std::sqrt(2.0 / width)));
    deep_b_.push_back(ad::Tensor::zeros({w}, true));
    width = w;
  }
  head_w_ = glorot({input_dim_ + width, 1}, rng);
  head_b_ = ad::Tensor::zeros({1}, true);
}

CrmModel::Forward CrmModel::forward(std::span<const std::vector<int>> id_batch) const {
  if (id_batch.empty()) throw std::invalid_argument("crm_forward: empty batch");
  const int fields = static_cast<int>(cardinalities_.size());
  const int batch = static_cast<int>(id_batch.size());
  for (const auto& row : id_batch) {
    if (static_cast<int>(row.size()) != fields) {
      throw std::invalid_argument("crm_forward: expected " + std::to_string(fields) +
                                  " field indices, got " + std::to_string(row.size()));
    }
    for (int f = 0; f < fields; ++f) {
      if (row[f] < 0 || row[f] >= cardinalities_[f]) {
        throw std::out_of_range("crm_forward: field '" + field_names_[f] + "' index " +
                                std::to_string(row[f]) + " outside [0," +
                                std::to_string(cardinalities_[f]) + ")");
      }
    }
  }

  ad::Tensor x0;
  {
    std::vector<int> idx(static_cast<std::size_t>(batch));
    for (int f = 0; f < fields; ++f) {
      for (int i = 0; i < batch; ++i) idx[static_cast<std::size_t>(i)] = id_batch[i][f];
      ad::Tensor e = ad::gather_rows(embeddings_[f], idx);
      x0 = f == 0 ? e : ad::concat_cols(x0, e);
    }
  }

  Forward out;
  ad::Tensor x = x0;
  for (int l = 0; l < cfg_.cross_layers; ++l) {
    x = ad::add(ad::mul(x0, ad::add_rowvec(ad::matmul(x, cross_w_[l]), cross_b_[l])), x);
    out.cross_hidden.push_back(x);
  }

  ad::Tensor deep = x0;
  for (std::size_t i = 0; i < deep_w_.size(); ++i) {
    deep = ad::relu(ad::add_rowvec(ad::matmul(deep, deep_w_[i]), deep_b_[i]));
  }

  ad::Tensor combined = ad::concat_cols(x, deep);
  ad::Tensor logits = ad::add_rowvec(ad::matmul(combined, head_w_), head_b_);
  out.probs = ad::reshape(ad::sigmoid(logits), {batch});
  return out;
}

std::vector<double> CrmModel::predict(std::span<const std::vector<int>> id_batch,
                                      std::size_t chunk) const {
  std::vector<double> probs;
  probs.reserve(id_batch.size());
  for (std::size_t start = 0; start < id_batch.size(); start += chunk) {
    const std::size_t len = std::min(chunk, id_batch.size() - start);
    const auto fwd = forward(id_batch.subspan(start, len));
    probs.insert(probs.end(), fwd.probs.value().begin(), fwd.probs.value().end());
  }
  return probs;
}

std::vector<std::pair<std::string, ad::Tensor>> CrmModel::named_params() const {
  std::vector<std::pair<std::string, ad::Tensor>> out;
  for (std::size_t f = 0; f < embeddings_.size(); ++f) {
    out.emplace_back("crm.embedding." + field_names_[f], embeddings_[f]);
  }
  for (std::size_t l = 0; l < cross_w_.size(); ++l) {
    out.emplace_back("crm.cross." + std::to_string(l + 1) + ".W", cross_w_[l]);
    out.emplace_back("crm.cross." + std::to_string(l + 1) + ".b", cross_b_[l]);
  }
  for (std::size_t i = 0; i < deep_w_.size(); ++i) {
    out.emplace_back("crm.deep." + std::to_string(i + 1) + ".W", deep_w_[i]);
    out.emplace_back("crm.deep." + std::to_string(i + 1) + ".b", deep_b_[i]);
  }
  out.emplace_back("crm.head.W", head_w_);
  out.emplace_back("crm.head.b", head_b_);
  return out;
}

std::vector<std::vector<double>> CrmModel::snapshot() const {
  std::vector<std::vector<double>> snap;
  for (const auto& [name, t] : named_params()) snap.push_back(t.value());
  return snap;
}

void CrmModel::restore(const std::vector<std::vector<double>>& snap) {
  auto params = named_params();
  if (snap.size() != params.size()) throw std::invalid_argument("CrmModel::restore: size mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i].second.apply_update([&](std::vector<double>& w) { w = snap[i]; });
  }
}

ad::Tensor crm_loss(const ad::Tensor& probs, const std::vector<double>& labels) {
  return ad::bce_mean(probs, labels);
}

}  // namespace corella

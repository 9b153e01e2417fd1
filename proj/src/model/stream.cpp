#include "dfinger/model/stream.hpp"

#include <Eigen/Dense>
#include <spdlog/spdlog.h>

#include <cmath>

#include "dfinger/error.hpp"

namespace dfinger {

using RowVec = Eigen::RowVectorXd;
using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct FrameWeights {
  struct Dense {
    MatR w;
    RowVec b;
    RowVec Apply(const RowVec& x) const { return x * w + b; }
  };
  struct Conv {
    std::vector<MatR> taps;  // K matrices [Cin, Cout]; the last is the current frame
    RowVec b;
  };
  std::size_t bands = 0, df_bins = 0, hidden = 0, order = 0, heads = 0;
  Conv erb1, erb2, df1, df2;
  Dense bottleneck;
  MatR gru_wx, gru_wh;
  RowVec gru_bx, gru_bh;
  Dense erb_fc1, erb_out, df_fc1, df_out;
  Dense wq, wk, wv, wo, ffn;
  std::vector<std::size_t> band_of_bin;
};

namespace {

MatR ToMat(const nn::Tensor& t, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
  return Eigen::Map<const MatR>(t.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

RowVec ToVec(const nn::Tensor& t) {
  return Eigen::Map<const RowVec>(t.data(), static_cast<Eigen::Index>(t.size()));
}

FrameWeights::Dense LoadDense(const nn::ParamStore& p, const std::string& name) {
  const nn::Tensor& w = p.at(name + ".w");
  return {ToMat(w, w.dim(0), w.dim(1)), ToVec(p.at(name + ".b"))};
}

FrameWeights::Conv LoadConv(const nn::ParamStore& p, const std::string& name) {
  const nn::Tensor& w = p.at(name + ".w");
  FrameWeights::Conv c;
  for (std::size_t j = 0; j < w.dim(0); ++j) c.taps.push_back(ToMat(w, w.dim(1), w.dim(2), j * w.dim(1) * w.dim(2)));
  c.b = ToVec(p.at(name + ".b"));
  return c;
}

double Sigm(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

RowVec Relu(RowVec v) { return v.cwiseMax(0.0); }

// Shifts `x` into the conv history and returns relu(conv output).
RowVec StepConv(const FrameWeights::Conv& c, std::vector<std::vector<double>>& hist, const RowVec& x) {
  hist.erase(hist.begin());
  hist.emplace_back(x.data(), x.data() + x.size());
  RowVec y = c.b;
  for (std::size_t j = 0; j < c.taps.size(); ++j) {
    y.noalias() += Eigen::Map<const RowVec>(hist[j].data(), static_cast<Eigen::Index>(hist[j].size())) * c.taps[j];
  }
  return Relu(std::move(y));
}

std::shared_ptr<FrameWeights> BuildWeights(const Model& model, FusionMode mode) {
  const nn::ParamStore& p = model.params();
  auto w = std::make_shared<FrameWeights>();
  const ModelConfig& cfg = model.config();
  w->bands = model.filterbank().num_bands;
  w->df_bins = model.num_df_bins();
  w->hidden = model.hidden();
  w->order = static_cast<std::size_t>(cfg.df_order);
  w->heads = static_cast<std::size_t>(cfg.attention_heads);
  w->band_of_bin = model.filterbank().band_of_bin;
  w->erb1 = LoadConv(p, "enc.erb_conv1");
  w->erb2 = LoadConv(p, "enc.erb_conv2");
  w->df1 = LoadConv(p, "enc.df_conv1");
  w->df2 = LoadConv(p, "enc.df_conv2");
  w->bottleneck = LoadDense(p, "enc.bottleneck");
  const std::size_t h = w->hidden;
  w->gru_wx = ToMat(p.at("enc.gru.wx"), h, 3 * h);
  w->gru_wh = ToMat(p.at("enc.gru.wh"), h, 3 * h);
  w->gru_bx = ToVec(p.at("enc.gru.bx"));
  w->gru_bh = ToVec(p.at("enc.gru.bh"));
  w->erb_fc1 = LoadDense(p, "dec.erb_fc1");
  w->erb_out = LoadDense(p, "dec.erb_out");
  w->df_fc1 = LoadDense(p, "dec.df_fc1");
  w->df_out = LoadDense(p, "dec.df_out");
  if (mode == FusionMode::kAttention) {
    w->wq = {ToMat(p.at("att.wq"), h, h), ToVec(p.at("att.bq"))};
    w->wk = {ToMat(p.at("att.wk"), h, h), ToVec(p.at("att.bk"))};
    w->wv = {ToMat(p.at("att.wv"), h, h), ToVec(p.at("att.bv"))};
    w->wo = {ToMat(p.at("att.wo"), h, h), ToVec(p.at("att.bo"))};
    w->ffn = LoadDense(p, "ffn");
  }
  return w;
}

}  // namespace

StreamEnhancer::StreamEnhancer(const Model& model, FusionMode mode)
    : mode_(mode),
      analysis_(model.config().analysis),
      analyzer_(model.config().analysis),
      synth_(model.config().analysis),
      normalizer_(model.filterbank(), model.num_df_bins()) {
  model.CheckFusionMode(mode);
  w_ = BuildWeights(model, mode);
  Reset();
}

void StreamEnhancer::Reset() {
  analyzer_.Reset();
  synth_.Reset();
  normalizer_.Reset();
  const std::size_t k = w_->erb1.taps.size();
  const std::size_t c = static_cast<std::size_t>(w_->erb1.b.size());
  auto fresh = [&](std::size_t width) {
    return ConvState{std::vector<std::vector<double>>(k, std::vector<double>(width, 0.0))};
  };
  conv_ = {fresh(w_->bands), fresh(c), fresh(2 * w_->df_bins), fresh(c)};
  h_.assign(w_->hidden, 0.0);
  ring_.assign(w_->order, std::vector<std::complex<double>>(w_->df_bins));
}

void StreamEnhancer::SetFingerprintSummary(std::optional<std::vector<double>> summary) {
  if (summary && summary->size() != w_->hidden) {
    Fail(ErrorKind::kInvalidConfig, "fingerprint summary has width " + std::to_string(summary->size()) +
                                        ", model expects " + std::to_string(w_->hidden));
  }
  if (mode_ == FusionMode::kAttention && summary) {
    Fail(ErrorKind::kInvalidConfig, "attention fusion needs the full fingerprint embedding");
  }
  summary_ = std::move(summary);
  if (!summary_) {
    keys_.reset();
    values_.reset();
  }
}

void StreamEnhancer::SetFingerprintEmbedding(const nn::Tensor& embedding) {
  if (embedding.rank() != 2 || embedding.dim(1) != w_->hidden || embedding.dim(0) == 0) {
    Fail(ErrorKind::kEmptyFingerprint, "fingerprint embedding must be [Tf >= 1, H]");
  }
  if (mode_ != FusionMode::kAttention) {
    summary_ = SummarizeFingerprint(embedding);
    return;
  }
  const std::size_t tf = embedding.dim(0), h = w_->hidden;
  const MatR e = ToMat(embedding, tf, h);
  MatR k = (e * w_->wk.w).rowwise() + w_->wk.b;
  MatR v = (e * w_->wv.w).rowwise() + w_->wv.b;
  keys_.emplace(k.data(), k.data() + k.size());
  values_.emplace(v.data(), v.data() + v.size());
  fp_frames_ = tf;
}

bool StreamEnhancer::fingerprint_active() const {
  if (mode_ == FusionMode::kBypass) return false;
  return mode_ == FusionMode::kAdditive ? summary_.has_value() : keys_.has_value();
}

std::size_t StreamEnhancer::hop_size() const { return static_cast<std::size_t>(analysis_.hop_size); }

std::size_t StreamEnhancer::latency_samples() const {
  return static_cast<std::size_t>(analysis_.fft_size - analysis_.hop_size);
}

void StreamEnhancer::Process(std::span<const double> in, std::span<double> out) {
  const FrameWeights& w = *w_;
  const std::size_t bins = static_cast<std::size_t>(analysis_.num_bins());
  std::vector<std::complex<double>> spec(bins);
  analyzer_.Push(in, spec);

  std::vector<double> erb(w.bands);
  std::vector<std::complex<double>> dff(w.df_bins);
  normalizer_.Process(spec, erb, dff);
  RowVec erb_v = Eigen::Map<const RowVec>(erb.data(), static_cast<Eigen::Index>(erb.size()));
  RowVec df_v(static_cast<Eigen::Index>(2 * w.df_bins));
  for (std::size_t f = 0; f < w.df_bins; ++f) {
    df_v[static_cast<Eigen::Index>(2 * f)] = dff[f].real();
    df_v[static_cast<Eigen::Index>(2 * f + 1)] = dff[f].imag();
  }

  const RowVec e2 = StepConv(w.erb2, conv_[1].taps, StepConv(w.erb1, conv_[0].taps, erb_v));
  const RowVec d2 = StepConv(w.df2, conv_[3].taps, StepConv(w.df1, conv_[2].taps, df_v));
  RowVec cat(e2.size() + d2.size());
  cat << e2, d2;
  const RowVec z = Relu(w.bottleneck.Apply(cat));

  const std::size_t hd = w.hidden;
  Eigen::Map<RowVec> h(h_.data(), static_cast<Eigen::Index>(hd));
  const RowVec gx = z * w.gru_wx + w.gru_bx;
  const RowVec gh = h * w.gru_wh + w.gru_bh;
  for (std::size_t i = 0; i < hd; ++i) {
    const auto ii = static_cast<Eigen::Index>(i), hi = static_cast<Eigen::Index>(hd + i),
               ni = static_cast<Eigen::Index>(2 * hd + i);
    const double r = Sigm(gx[ii] + gh[ii]);
    const double u = Sigm(gx[hi] + gh[hi]);
    const double n = std::tanh(gx[ni] + r * gh[ni]);
    h[ii] = (1.0 - u) * n + u * h[ii];
  }
  if (!h.allFinite()) Fail(ErrorKind::kNumeric, "stream: non-finite recurrent state");

  RowVec e = h;
  if (mode_ == FusionMode::kAdditive) {
    if (summary_) {
      e += Eigen::Map<const RowVec>(summary_->data(), static_cast<Eigen::Index>(hd));
    } else if (!warned_absent_) {
      spdlog::warn("no fingerprint summary cached; running as bypass until one arrives");
      warned_absent_ = true;
    }
  } else if (mode_ == FusionMode::kAttention) {
    if (keys_) {
      const std::size_t dh = hd / w.heads, tf = fp_frames_;
      const RowVec q = w.wq.Apply(h);
      const Eigen::Map<const MatR> k(keys_->data(), static_cast<Eigen::Index>(tf), static_cast<Eigen::Index>(hd));
      const Eigen::Map<const MatR> v(values_->data(), static_cast<Eigen::Index>(tf), static_cast<Eigen::Index>(hd));
      RowVec mixed(static_cast<Eigen::Index>(hd));
      const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
      for (std::size_t hh = 0; hh < w.heads; ++hh) {
        const auto c0 = static_cast<Eigen::Index>(hh * dh), cn = static_cast<Eigen::Index>(dh);
        Eigen::VectorXd s = k.middleCols(c0, cn) * q.segment(c0, cn).transpose() * scale;
        s = (s.array() - s.maxCoeff()).exp();
        s /= s.sum();
        mixed.segment(c0, cn) = s.transpose() * v.middleCols(c0, cn);
      }
      e += w.ffn.Apply(w.wo.Apply(mixed));
    } else if (!warned_absent_) {
      spdlog::warn("no fingerprint embedding cached; running as bypass until one arrives");
      warned_absent_ = true;
    }
  }

  const RowVec gl = w.erb_out.Apply(Relu(w.erb_fc1.Apply(e)));
  const RowVec coefs = w.df_out.Apply(Relu(w.df_fc1.Apply(e)));

  // Ring of raw spectra for the deep filter, newest first.
  std::rotate(ring_.rbegin(), ring_.rbegin() + 1, ring_.rend());
  std::copy_n(spec.begin(), w.df_bins, ring_[0].begin());
  for (std::size_t f = 0; f < w.df_bins; ++f) {
    std::complex<double> acc = 0.0;
    for (std::size_t tau = 0; tau < w.order; ++tau) {
      const auto ci = static_cast<Eigen::Index>((f * w.order + tau) * 2);
      acc += std::complex<double>(coefs[ci], coefs[ci + 1]) * ring_[tau][f];
    }
    spec[f] = acc;
  }
  for (std::size_t f = 0; f < bins; ++f) spec[f] *= Sigm(gl[static_cast<Eigen::Index>(w.band_of_bin[f])]);
  synth_.Push(spec, out);
}

AudioBuffer StreamEnhancer::ProcessAll(const AudioBuffer& x) {
  const std::size_t hop = hop_size();
  const std::size_t hops = (x.size() + hop - 1) / hop + latency_samples() / hop;
  std::vector<double> in(hop), out(hop);
  AudioBuffer y{{}, x.sample_rate};
  y.samples.reserve(hops * hop);
  for (std::size_t k = 0; k < hops; ++k) {
    for (std::size_t i = 0; i < hop; ++i) {
      const std::size_t n = k * hop + i;
      in[i] = n < x.size() ? x.samples[n] : 0.0;
    }
    Process(in, out);
    y.samples.insert(y.samples.end(), out.begin(), out.end());
  }
  y.samples.erase(y.samples.begin(), y.samples.begin() + static_cast<std::ptrdiff_t>(latency_samples()));
  y.samples.resize(x.size());
  return y;
}

}  // namespace dfinger

#include "dfinger/model/spectral.hpp"

#include "dfinger/error.hpp"

namespace dfinger {

ComplexSpectrogram ApplyGains(const ComplexSpectrogram& spec, const std::vector<double>& gains,
                              const ErbFilterbank& fb) {
  if (spec.num_bins != fb.num_bins || gains.size() != spec.num_frames * fb.num_bands) {
    Fail(ErrorKind::kInvalidShape, "apply_gains: " + std::to_string(gains.size()) + " gains for " +
                                       std::to_string(spec.num_frames) + " frames x " +
                                       std::to_string(fb.num_bands) + " bands");
  }
  ComplexSpectrogram out = spec;
  for (std::size_t k = 0; k < spec.num_frames; ++k)
    for (std::size_t f = 0; f < spec.num_bins; ++f)
      out.at(k, f) *= gains[k * fb.num_bands + fb.band_of_bin[f]];
  return out;
}

ComplexSpectrogram ApplyDeepFilter(const ComplexSpectrogram& spec, const DfCoefficients& coefs) {
  if (coefs.num_frames != spec.num_frames || coefs.num_df_bins > spec.num_bins || coefs.order == 0 ||
      coefs.taps.size() != coefs.num_frames * coefs.num_df_bins * coefs.order) {
    Fail(ErrorKind::kInvalidShape, "apply_deep_filter: coefficient layout does not match spectrum");
  }
  ComplexSpectrogram out = spec;
  for (std::size_t k = 0; k < spec.num_frames; ++k) {
    for (std::size_t f = 0; f < coefs.num_df_bins; ++f) {
      std::complex<double> acc = 0.0;
      for (std::size_t tau = 0; tau < coefs.order && tau <= k; ++tau) {
        acc += coefs.at(k, f, tau) * spec.at(k - tau, f);
      }
      out.at(k, f) = acc;
    }
  }
  return out;
}

nn::Tensor SpectraToTensor(const std::vector<const ComplexSpectrogram*>& specs) {
  if (specs.empty()) Fail(ErrorKind::kInvalidShape, "no spectra");
  const std::size_t frames = specs[0]->num_frames, bins = specs[0]->num_bins;
  nn::Tensor t({specs.size(), frames, bins, 2});
  for (std::size_t b = 0; b < specs.size(); ++b) {
    if (specs[b]->num_frames != frames || specs[b]->num_bins != bins) {
      Fail(ErrorKind::kInvalidShape, "spectra in a batch must share a shape");
    }
    double* dst = t.data() + b * frames * bins * 2;
    for (std::size_t i = 0; i < frames * bins; ++i) {
      dst[2 * i] = specs[b]->data[i].real();
      dst[2 * i + 1] = specs[b]->data[i].imag();
    }
  }
  return t;
}

ComplexSpectrogram TensorToSpectrum(const nn::Tensor& t, std::size_t batch_index) {
  if (t.rank() != 4 || t.dim(3) != 2 || batch_index >= t.dim(0)) {
    Fail(ErrorKind::kInvalidShape, "expected [B, T, F, 2], got " + nn::ShapeString(t.shape()));
  }
  ComplexSpectrogram s(t.dim(1), t.dim(2));
  const double* src = t.data() + batch_index * s.num_frames * s.num_bins * 2;
  for (std::size_t i = 0; i < s.data.size(); ++i) s.data[i] = {src[2 * i], src[2 * i + 1]};
  return s;
}

nn::Var DeepFilterOp(nn::Tape& tape, nn::Var noisy_var, nn::Var coefs, std::size_t num_df_bins,
                     std::size_t order) {
  const nn::Tensor& noisy = tape.value(noisy_var);
  const nn::Tensor& cv = tape.value(coefs);
  if (noisy.rank() != 4 || noisy.dim(3) != 2 || num_df_bins > noisy.dim(2) ||
      cv.shape() != nn::Shape{noisy.dim(0), noisy.dim(1), num_df_bins * order * 2}) {
    Fail(ErrorKind::kInvalidShape, "deep filter: spectrum " + nn::ShapeString(noisy.shape()) +
                                       ", coefficients " + nn::ShapeString(cv.shape()));
  }
  const std::size_t batch = noisy.dim(0), frames = noisy.dim(1), bins = noisy.dim(2);
  auto xi = [=](std::size_t b, std::size_t k, std::size_t f) { return ((b * frames + k) * bins + f) * 2; };
  auto ci = [=](std::size_t b, std::size_t k, std::size_t f, std::size_t tau) {
    return (((b * frames + k) * num_df_bins + f) * order + tau) * 2;
  };
  nn::Tensor y = noisy;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t k = 0; k < frames; ++k) {
      for (std::size_t f = 0; f < num_df_bins; ++f) {
        double re = 0.0, im = 0.0;
        for (std::size_t tau = 0; tau < order && tau <= k; ++tau) {
          const double cr = cv[ci(b, k, f, tau)], cim = cv[ci(b, k, f, tau) + 1];
          const double xr = noisy[xi(b, k - tau, f)], xim = noisy[xi(b, k - tau, f) + 1];
          re += cr * xr - cim * xim;
          im += cr * xim + cim * xr;
        }
        y[xi(b, k, f)] = re;
        y[xi(b, k, f) + 1] = im;
      }
    }
  }
  return tape.Record(
      "deep_filter", std::move(y), {noisy_var, coefs}, [=](nn::Tape& t, std::size_t self) {
        const nn::Tensor& g = t.grad_of(self);
        const nn::Tensor& x = t.value(noisy_var);
        const nn::Tensor& c = t.value(coefs);
        const bool dx = t.requires_grad(noisy_var), dc = t.requires_grad(coefs);
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t k = 0; k < frames; ++k) {
            if (dx) {
              // Bins above the filter range pass straight through.
              nn::Tensor& gx = t.grad(noisy_var);
              for (std::size_t f = num_df_bins; f < bins; ++f) {
                gx[xi(b, k, f)] += g[xi(b, k, f)];
                gx[xi(b, k, f) + 1] += g[xi(b, k, f) + 1];
              }
            }
            for (std::size_t f = 0; f < num_df_bins; ++f) {
              const double gr = g[xi(b, k, f)], gim = g[xi(b, k, f) + 1];
              for (std::size_t tau = 0; tau < order && tau <= k; ++tau) {
                const std::size_t xs = xi(b, k - tau, f), cs = ci(b, k, f, tau);
                if (dc) {
                  nn::Tensor& gc = t.grad(coefs);
                  gc[cs] += gr * x[xs] + gim * x[xs + 1];
                  gc[cs + 1] += gim * x[xs] - gr * x[xs + 1];
                }
                if (dx) {
                  nn::Tensor& gx = t.grad(noisy_var);
                  gx[xs] += gr * c[cs] + gim * c[cs + 1];
                  gx[xs + 1] += gim * c[cs] - gr * c[cs + 1];
                }
              }
            }
          }
      });
}

nn::Var GainsOp(nn::Tape& tape, nn::Var spec, nn::Var gains, const ErbFilterbank& fb) {
  const nn::Tensor& sv = tape.value(spec);
  const nn::Tensor& gv = tape.value(gains);
  if (sv.rank() != 4 || sv.dim(3) != 2 || sv.dim(2) != fb.num_bins ||
      gv.shape() != nn::Shape{sv.dim(0), sv.dim(1), fb.num_bands}) {
    Fail(ErrorKind::kInvalidShape, "gains: spectrum " + nn::ShapeString(sv.shape()) + ", gains " +
                                       nn::ShapeString(gv.shape()));
  }
  const std::size_t rows = sv.dim(0) * sv.dim(1), bins = fb.num_bins, bands = fb.num_bands;
  nn::Tensor y = sv;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t f = 0; f < bins; ++f) {
      const double g = gv[r * bands + fb.band_of_bin[f]];
      y[(r * bins + f) * 2] *= g;
      y[(r * bins + f) * 2 + 1] *= g;
    }
  std::vector<std::size_t> band_of_bin = fb.band_of_bin;
  return tape.Record("gains", std::move(y), {spec, gains},
                     [=](nn::Tape& t, std::size_t self) {
                       const nn::Tensor& g = t.grad_of(self);
                       const nn::Tensor& sv = t.value(spec);
                       const nn::Tensor& gv = t.value(gains);
                       const bool ds = t.requires_grad(spec), dg = t.requires_grad(gains);
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t f = 0; f < bins; ++f) {
                           const std::size_t i = (r * bins + f) * 2;
                           const std::size_t gb = r * bands + band_of_bin[f];
                           if (ds) {
                             nn::Tensor& gs = t.grad(spec);
                             gs[i] += g[i] * gv[gb];
                             gs[i + 1] += g[i + 1] * gv[gb];
                           }
                           if (dg) t.grad(gains)[gb] += g[i] * sv[i] + g[i + 1] * sv[i + 1];
                         }
                     });
}

}  // namespace dfinger

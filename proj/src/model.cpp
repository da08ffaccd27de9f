#include "fedsim/model.hpp"

#include <algorithm>
#include <cmath>

#include "fedsim/errors.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

std::size_t LayerLayout::dim() const {
    std::size_t d = 0;
    for (const auto& s : segments) d += s.length;
    return d;
}

std::size_t LayerLayout::weight_count() const {
    std::size_t d = 0;
    for (const auto& s : segments)
        if (s.is_weight()) d += s.length;
    return d;
}

const LayerSegment* LayerLayout::find(std::string_view name) const {
    for (const auto& s : segments)
        if (s.name == name) return &s;
    return nullptr;
}

void LayerLayout::validate() const {
    std::size_t expect = 0;
    for (std::size_t i = 0; i < segments.size(); ++i) {
        const auto& s = segments[i];
        if (s.offset != expect) throw DimensionError("layout: segments not contiguous");
        if (s.length == 0) throw DimensionError("layout: empty segment");
        for (std::size_t j = i + 1; j < segments.size(); ++j)
            if (segments[j].name == s.name) throw DimensionError("layout: duplicate segment name");
        expect += s.length;
    }
}

void ModelSpec::validate() const {
    if (num_classes < 2) throw DimensionError("model spec: need at least 2 classes");
    if (input_rows < 1 || input_cols < 1 || input_channels < 1)
        throw DimensionError("model spec: bad input shape");
    if (arch == Arch::mlp2 && hidden < 1) throw DimensionError("model spec: hidden size must be >= 1");
    if (arch == Arch::cnn2) {
        if (conv1_channels < 1 || conv2_channels < 1)
            throw DimensionError("model spec: channel counts must be >= 1");
        // Two 2x2 pools need both spatial dims divisible by 4.
        if (input_rows % 4 != 0 || input_cols % 4 != 0)
            throw DimensionError("model spec: cnn2 input rows/cols must be multiples of 4");
    }
}

LayerLayout ModelSpec::make_layout() const {
    validate();
    LayerLayout layout;
    std::size_t off = 0;
    auto push = [&](std::string name, SegmentKind kind, std::size_t len, int fi, int fo, int kr, int kc) {
        layout.segments.push_back({std::move(name), kind, off, len, fi, fo, kr, kc});
        off += len;
    };
    if (arch == Arch::mlp2) {
        const std::size_t in = static_cast<std::size_t>(input_dim());
        push("fc1.weight", SegmentKind::fully_connected, in * hidden, input_dim(), hidden, 0, 0);
        push("fc1.bias", SegmentKind::bias, hidden, 0, 0, 0, 0);
        push("fc2.weight", SegmentKind::fully_connected,
             static_cast<std::size_t>(hidden) * num_classes, hidden, num_classes, 0, 0);
        push("fc2.bias", SegmentKind::bias, num_classes, 0, 0, 0, 0);
    } else {
        const int r4 = input_rows / 4;
        const int c4 = input_cols / 4;
        const std::size_t flat = static_cast<std::size_t>(conv2_channels) * r4 * c4;
        push("conv1.weight", SegmentKind::conv,
             static_cast<std::size_t>(conv1_channels) * input_channels * 9, input_channels,
             conv1_channels, 3, 3);
        push("conv1.bias", SegmentKind::bias, conv1_channels, 0, 0, 0, 0);
        push("conv2.weight", SegmentKind::conv,
             static_cast<std::size_t>(conv2_channels) * conv1_channels * 9, conv1_channels,
             conv2_channels, 3, 3);
        push("conv2.bias", SegmentKind::bias, conv2_channels, 0, 0, 0, 0);
        push("fc1.weight", SegmentKind::fully_connected, flat * num_classes, static_cast<int>(flat),
             num_classes, 0, 0);
        push("fc1.bias", SegmentKind::bias, num_classes, 0, 0, 0, 0);
    }
    layout.validate();
    return layout;
}

Model init_model(const ModelSpec& spec, std::uint64_t seed) {
    Model m;
    m.spec = spec;
    m.layout = spec.make_layout();
    m.params.assign(m.layout.dim(), 0.0);
    Rng rng(derive_seed(seed, 0x1417));
    for (const auto& seg : m.layout.segments) {
        if (!seg.is_weight()) continue; // biases stay zero
        const int receptive = seg.kind == SegmentKind::conv
                                  ? seg.fan_in * seg.kernel_rows * seg.kernel_cols
                                  : seg.fan_in;
        const double limit = std::sqrt(6.0 / static_cast<double>(receptive));
        for (std::size_t i = 0; i < seg.length; ++i)
            m.params[seg.offset + i] = rng.uniform(-limit, limit);
    }
    return m;
}

namespace {

// Numerically stable softmax cross-entropy; accumulates d(loss)/d(logits)
// scaled by inv_batch into dlogits.
double softmax_ce(std::span<const double> logits, int label, double inv_batch,
                  std::span<double> dlogits) {
    const int C = static_cast<int>(logits.size());
    double mx = logits[0];
    for (int c = 1; c < C; ++c) mx = std::max(mx, logits[c]);
    double denom = 0.0;
    for (int c = 0; c < C; ++c) denom += std::exp(logits[c] - mx);
    const double log_denom = std::log(denom) + mx;
    if (!dlogits.empty()) {
        for (int c = 0; c < C; ++c) {
            double p = std::exp(logits[c] - log_denom);
            dlogits[c] = (p - (c == label ? 1.0 : 0.0)) * inv_batch;
        }
    }
    return log_denom - logits[label];
}

struct MlpOffsets {
    std::size_t w1, b1, w2, b2;
    int in, hidden, classes;
};

MlpOffsets mlp_offsets(const ModelSpec& spec) {
    MlpOffsets o;
    o.in = spec.input_dim();
    o.hidden = spec.hidden;
    o.classes = spec.num_classes;
    o.w1 = 0;
    o.b1 = o.w1 + static_cast<std::size_t>(o.in) * o.hidden;
    o.w2 = o.b1 + o.hidden;
    o.b2 = o.w2 + static_cast<std::size_t>(o.hidden) * o.classes;
    return o;
}

double eval_mlp(const ModelSpec& spec, std::span<const double> params, const Dataset& ds,
                std::span<const std::size_t> batch, ParamVector* grad) {
    const MlpOffsets o = mlp_offsets(spec);
    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    std::vector<double> z1(o.hidden), a1(o.hidden), logits(o.classes), dlogits(o.classes),
        d1(o.hidden);
    double loss = 0.0;
    for (std::size_t bi : batch) {
        const auto x = ds.input(bi);
        const int y = ds.labels[bi];
        if (y < 0 || y >= o.classes) throw DimensionError("loss_and_grad: label out of range");
        for (int h = 0; h < o.hidden; ++h) {
            const double* w = params.data() + o.w1 + static_cast<std::size_t>(h) * o.in;
            double acc = params[o.b1 + h];
            for (int i = 0; i < o.in; ++i) acc += w[i] * x[i];
            z1[h] = acc;
            a1[h] = acc > 0.0 ? acc : 0.0;
        }
        for (int c = 0; c < o.classes; ++c) {
            const double* w = params.data() + o.w2 + static_cast<std::size_t>(c) * o.hidden;
            double acc = params[o.b2 + c];
            for (int h = 0; h < o.hidden; ++h) acc += w[h] * a1[h];
            logits[c] = acc;
        }
        loss += inv_batch * softmax_ce(logits, y, inv_batch,
                                       grad ? std::span<double>(dlogits) : std::span<double>());
        if (!grad) continue;

        ParamVector& g = *grad;
        std::fill(d1.begin(), d1.end(), 0.0);
        for (int c = 0; c < o.classes; ++c) {
            const double dc = dlogits[c];
            double* gw = g.data() + o.w2 + static_cast<std::size_t>(c) * o.hidden;
            const double* w = params.data() + o.w2 + static_cast<std::size_t>(c) * o.hidden;
            for (int h = 0; h < o.hidden; ++h) {
                gw[h] += dc * a1[h];
                d1[h] += dc * w[h];
            }
            g[o.b2 + c] += dc;
        }
        for (int h = 0; h < o.hidden; ++h) {
            if (z1[h] <= 0.0) continue;
            const double dh = d1[h];
            double* gw = g.data() + o.w1 + static_cast<std::size_t>(h) * o.in;
            for (int i = 0; i < o.in; ++i) gw[i] += dh * x[i];
            g[o.b1 + h] += dh;
        }
    }
    return loss;
}

struct CnnShape {
    int R, C, in_ch, c1, c2, R2, C2, R4, C4, classes;
    std::size_t w1, b1, w2, b2, wf, bf, flat;
};

CnnShape cnn_shape(const ModelSpec& spec) {
    CnnShape s;
    s.R = spec.input_rows;
    s.C = spec.input_cols;
    s.in_ch = spec.input_channels;
    s.c1 = spec.conv1_channels;
    s.c2 = spec.conv2_channels;
    s.R2 = s.R / 2;
    s.C2 = s.C / 2;
    s.R4 = s.R / 4;
    s.C4 = s.C / 4;
    s.classes = spec.num_classes;
    s.flat = static_cast<std::size_t>(s.c2) * s.R4 * s.C4;
    s.w1 = 0;
    s.b1 = s.w1 + static_cast<std::size_t>(s.c1) * s.in_ch * 9;
    s.w2 = s.b1 + s.c1;
    s.b2 = s.w2 + static_cast<std::size_t>(s.c2) * s.c1 * 9;
    s.wf = s.b2 + s.c2;
    s.bf = s.wf + s.flat * s.classes;
    return s;
}

// 3x3 same-padding convolution: out[oc] = bias[oc] + sum_ic W[oc][ic] * in[ic].
void conv3x3(const double* in, int in_ch, int R, int C, const double* w, const double* b,
             int out_ch, double* out) {
    for (int oc = 0; oc < out_ch; ++oc) {
        double* plane = out + static_cast<std::size_t>(oc) * R * C;
        for (int i = 0; i < R * C; ++i) plane[i] = b[oc];
        for (int ic = 0; ic < in_ch; ++ic) {
            const double* src = in + static_cast<std::size_t>(ic) * R * C;
            const double* k = w + (static_cast<std::size_t>(oc) * in_ch + ic) * 9;
            for (int r = 0; r < R; ++r) {
                for (int c = 0; c < C; ++c) {
                    double acc = 0.0;
                    for (int dr = -1; dr <= 1; ++dr) {
                        const int rr = r + dr;
                        if (rr < 0 || rr >= R) continue;
                        for (int dc = -1; dc <= 1; ++dc) {
                            const int cc = c + dc;
                            if (cc < 0 || cc >= C) continue;
                            acc += k[(dr + 1) * 3 + (dc + 1)] * src[rr * C + cc];
                        }
                    }
                    plane[r * C + c] += acc;
                }
            }
        }
    }
}

void relu_inplace(double* v, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        if (v[i] < 0.0) v[i] = 0.0;
}

// 2x2 max pool, stride 2; argmax flat indices recorded for the backward pass.
void maxpool2(const double* in, int ch, int R, int C, double* out, int* argmax) {
    const int R2 = R / 2, C2 = C / 2;
    for (int k = 0; k < ch; ++k) {
        const double* src = in + static_cast<std::size_t>(k) * R * C;
        double* dst = out + static_cast<std::size_t>(k) * R2 * C2;
        int* am = argmax + static_cast<std::size_t>(k) * R2 * C2;
        for (int r = 0; r < R2; ++r) {
            for (int c = 0; c < C2; ++c) {
                int best = (2 * r) * C + 2 * c;
                double bv = src[best];
                const int cands[3] = {(2 * r) * C + 2 * c + 1, (2 * r + 1) * C + 2 * c,
                                      (2 * r + 1) * C + 2 * c + 1};
                for (int idx : cands) {
                    if (src[idx] > bv) {
                        bv = src[idx];
                        best = idx;
                    }
                }
                dst[r * C2 + c] = bv;
                am[r * C2 + c] = best;
            }
        }
    }
}

// Backward of conv3x3 w.r.t. weights/bias/input. din may be null.
void conv3x3_backward(const double* in, int in_ch, int R, int C, const double* w, int out_ch,
                      const double* dout, double* dw, double* db, double* din) {
    for (int oc = 0; oc < out_ch; ++oc) {
        const double* dplane = dout + static_cast<std::size_t>(oc) * R * C;
        for (int i = 0; i < R * C; ++i) db[oc] += dplane[i];
        for (int ic = 0; ic < in_ch; ++ic) {
            const double* src = in + static_cast<std::size_t>(ic) * R * C;
            const double* k = w + (static_cast<std::size_t>(oc) * in_ch + ic) * 9;
            double* gk = dw + (static_cast<std::size_t>(oc) * in_ch + ic) * 9;
            double* dsrc = din ? din + static_cast<std::size_t>(ic) * R * C : nullptr;
            for (int r = 0; r < R; ++r) {
                for (int c = 0; c < C; ++c) {
                    const double g = dplane[r * C + c];
                    if (g == 0.0) continue;
                    for (int dr = -1; dr <= 1; ++dr) {
                        const int rr = r + dr;
                        if (rr < 0 || rr >= R) continue;
                        for (int dc = -1; dc <= 1; ++dc) {
                            const int cc = c + dc;
                            if (cc < 0 || cc >= C) continue;
                            gk[(dr + 1) * 3 + (dc + 1)] += g * src[rr * C + cc];
                            if (dsrc) dsrc[rr * C + cc] += g * k[(dr + 1) * 3 + (dc + 1)];
                        }
                    }
                }
            }
        }
    }
}

double eval_cnn(const ModelSpec& spec, std::span<const double> params, const Dataset& ds,
                std::span<const std::size_t> batch, ParamVector* grad) {
    const CnnShape s = cnn_shape(spec);
    const double inv_batch = 1.0 / static_cast<double>(batch.size());

    const std::size_t n1 = static_cast<std::size_t>(s.c1) * s.R * s.C;
    const std::size_t p1n = static_cast<std::size_t>(s.c1) * s.R2 * s.C2;
    const std::size_t n2 = static_cast<std::size_t>(s.c2) * s.R2 * s.C2;
    const std::size_t p2n = s.flat;

    std::vector<double> z1(n1), p1(p1n), z2(n2), p2(p2n);
    std::vector<int> am1(p1n), am2(p2n);
    std::vector<double> logits(s.classes), dlogits(s.classes);
    std::vector<double> dp2(p2n), dz2(n2), dp1(p1n), dz1(n1);

    double loss = 0.0;
    for (std::size_t bi : batch) {
        const auto x = ds.input(bi);
        const int y = ds.labels[bi];
        if (y < 0 || y >= s.classes) throw DimensionError("loss_and_grad: label out of range");

        conv3x3(x.data(), s.in_ch, s.R, s.C, params.data() + s.w1, params.data() + s.b1, s.c1,
                z1.data());
        std::vector<double> a1 = z1;
        relu_inplace(a1.data(), n1);
        maxpool2(a1.data(), s.c1, s.R, s.C, p1.data(), am1.data());

        conv3x3(p1.data(), s.c1, s.R2, s.C2, params.data() + s.w2, params.data() + s.b2, s.c2,
                z2.data());
        std::vector<double> a2 = z2;
        relu_inplace(a2.data(), n2);
        maxpool2(a2.data(), s.c2, s.R2, s.C2, p2.data(), am2.data());

        for (int c = 0; c < s.classes; ++c) {
            const double* w = params.data() + s.wf + static_cast<std::size_t>(c) * s.flat;
            double acc = params[s.bf + c];
            for (std::size_t j = 0; j < s.flat; ++j) acc += w[j] * p2[j];
            logits[c] = acc;
        }
        loss += inv_batch * softmax_ce(logits, y, inv_batch,
                                       grad ? std::span<double>(dlogits) : std::span<double>());
        if (!grad) continue;

        ParamVector& g = *grad;
        std::fill(dp2.begin(), dp2.end(), 0.0);
        for (int c = 0; c < s.classes; ++c) {
            const double dc = dlogits[c];
            double* gw = g.data() + s.wf + static_cast<std::size_t>(c) * s.flat;
            const double* w = params.data() + s.wf + static_cast<std::size_t>(c) * s.flat;
            for (std::size_t j = 0; j < s.flat; ++j) {
                gw[j] += dc * p2[j];
                dp2[j] += dc * w[j];
            }
            g[s.bf + c] += dc;
        }

        std::fill(dz2.begin(), dz2.end(), 0.0);
        for (int k = 0; k < s.c2; ++k) {
            for (int i = 0; i < s.R4 * s.C4; ++i) {
                const std::size_t pi = static_cast<std::size_t>(k) * s.R4 * s.C4 + i;
                dz2[static_cast<std::size_t>(k) * s.R2 * s.C2 + am2[pi]] += dp2[pi];
            }
        }
        for (std::size_t i = 0; i < n2; ++i)
            if (z2[i] <= 0.0) dz2[i] = 0.0;

        std::fill(dp1.begin(), dp1.end(), 0.0);
        conv3x3_backward(p1.data(), s.c1, s.R2, s.C2, params.data() + s.w2, s.c2, dz2.data(),
                         g.data() + s.w2, g.data() + s.b2, dp1.data());

        std::fill(dz1.begin(), dz1.end(), 0.0);
        for (int k = 0; k < s.c1; ++k) {
            for (int i = 0; i < s.R2 * s.C2; ++i) {
                const std::size_t pi = static_cast<std::size_t>(k) * s.R2 * s.C2 + i;
                dz1[static_cast<std::size_t>(k) * s.R * s.C + am1[pi]] += dp1[pi];
            }
        }
        for (std::size_t i = 0; i < n1; ++i)
            if (z1[i] <= 0.0) dz1[i] = 0.0;

        conv3x3_backward(x.data(), s.in_ch, s.R, s.C, params.data() + s.w1, s.c1, dz1.data(),
                         g.data() + s.w1, g.data() + s.b1, nullptr);
    }
    return loss;
}

void logits_of(const ModelSpec& spec, std::span<const double> params, std::span<const double> x,
               std::vector<double>& logits) {
    if (spec.arch == Arch::mlp2) {
        const MlpOffsets o = mlp_offsets(spec);
        std::vector<double> a1(o.hidden);
        for (int h = 0; h < o.hidden; ++h) {
            const double* w = params.data() + o.w1 + static_cast<std::size_t>(h) * o.in;
            double acc = params[o.b1 + h];
            for (int i = 0; i < o.in; ++i) acc += w[i] * x[i];
            a1[h] = acc > 0.0 ? acc : 0.0;
        }
        logits.assign(o.classes, 0.0);
        for (int c = 0; c < o.classes; ++c) {
            const double* w = params.data() + o.w2 + static_cast<std::size_t>(c) * o.hidden;
            double acc = params[o.b2 + c];
            for (int h = 0; h < o.hidden; ++h) acc += w[h] * a1[h];
            logits[c] = acc;
        }
        return;
    }
    const CnnShape s = cnn_shape(spec);
    const std::size_t n1 = static_cast<std::size_t>(s.c1) * s.R * s.C;
    const std::size_t n2 = static_cast<std::size_t>(s.c2) * s.R2 * s.C2;
    std::vector<double> z1(n1), p1(static_cast<std::size_t>(s.c1) * s.R2 * s.C2), z2(n2),
        p2(s.flat);
    std::vector<int> am1(p1.size()), am2(p2.size());
    conv3x3(x.data(), s.in_ch, s.R, s.C, params.data() + s.w1, params.data() + s.b1, s.c1,
            z1.data());
    relu_inplace(z1.data(), n1);
    maxpool2(z1.data(), s.c1, s.R, s.C, p1.data(), am1.data());
    conv3x3(p1.data(), s.c1, s.R2, s.C2, params.data() + s.w2, params.data() + s.b2, s.c2,
            z2.data());
    relu_inplace(z2.data(), n2);
    maxpool2(z2.data(), s.c2, s.R2, s.C2, p2.data(), am2.data());
    logits.assign(s.classes, 0.0);
    for (int c = 0; c < s.classes; ++c) {
        const double* w = params.data() + s.wf + static_cast<std::size_t>(c) * s.flat;
        double acc = params[s.bf + c];
        for (std::size_t j = 0; j < s.flat; ++j) acc += w[j] * p2[j];
        logits[c] = acc;
    }
}

} // namespace

LossGrad eval_at(const ModelSpec& spec, std::span<const double> params, const Dataset& ds,
                 std::span<const std::size_t> batch, bool want_grad) {
    spec.validate();
    if (batch.empty()) throw DimensionError("loss_and_grad: empty batch");
    if (ds.input_dim != spec.input_dim())
        throw DimensionError("loss_and_grad: dataset input shape does not match model");
    if (params.size() != spec.make_layout().dim())
        throw DimensionError("loss_and_grad: parameter dimension mismatch");

    LossGrad out;
    if (want_grad) out.grad.assign(params.size(), 0.0);
    ParamVector* g = want_grad ? &out.grad : nullptr;
    out.loss = spec.arch == Arch::mlp2 ? eval_mlp(spec, params, ds, batch, g)
                                       : eval_cnn(spec, params, ds, batch, g);
    // Non-finite results are possible once parameters blow up; the caller
    // (the round loop) detects that and records a diverged run.
    return out;
}

LossGrad loss_and_grad(const Model& m, const Dataset& ds, std::span<const std::size_t> batch) {
    return eval_at(m.spec, m.params, ds, batch, true);
}

ParamVector grad_at_masked(const Model& m, std::span<const std::uint8_t> mask_bits,
                           const Dataset& ds, std::span<const std::size_t> batch) {
    if (mask_bits.size() != m.params.size())
        throw DimensionError("grad_at_masked: mask dimension mismatch");
    ParamVector masked(m.params.size());
    for (std::size_t i = 0; i < masked.size(); ++i)
        masked[i] = mask_bits[i] ? m.params[i] : 0.0;
    return eval_at(m.spec, masked, ds, batch, true).grad;
}

Model apply_update(const Model& m, std::span<const double> direction, double lr) {
    if (direction.size() != m.params.size())
        throw DimensionError("apply_update: dimension mismatch");
    if (lr < 0.0) throw DimensionError("apply_update: negative learning rate");
    Model out = m;
    for (std::size_t i = 0; i < out.params.size(); ++i) out.params[i] -= lr * direction[i];
    return out;
}

double accuracy(const Model& m, const Dataset& ds, std::span<const std::size_t> subset) {
    if (subset.empty()) throw DimensionError("accuracy: empty dataset");
    std::vector<double> logits;
    std::size_t correct = 0;
    for (std::size_t i : subset) {
        logits_of(m.spec, m.params, ds.input(i), logits);
        int best = 0;
        for (int c = 1; c < static_cast<int>(logits.size()); ++c)
            if (logits[c] > logits[best]) best = c;
        if (best == ds.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(subset.size());
}

double accuracy(const Model& m, const Dataset& ds) {
    std::vector<std::size_t> all(ds.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return accuracy(m, ds, all);
}

std::vector<std::string> default_critical_segments(const LayerLayout& layout) {
    std::vector<std::string> out;
    for (const auto& s : layout.segments) {
        if (s.kind == SegmentKind::conv) {
            out.push_back(s.name);
            break;
        }
    }
    for (auto it = layout.segments.rbegin(); it != layout.segments.rend(); ++it) {
        if (it->kind == SegmentKind::fully_connected) {
            out.push_back(it->name);
            break;
        }
    }
    return out;
}

Arch arch_from_string(std::string_view s) {
    if (s == "mlp2") return Arch::mlp2;
    if (s == "cnn2") return Arch::cnn2;
    throw ConfigError("unknown architecture: " + std::string(s));
}

std::string arch_to_string(Arch a) { return a == Arch::mlp2 ? "mlp2" : "cnn2"; }

} // namespace fedsim

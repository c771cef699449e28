#include "uslam/core/ssim.hpp"

#include <cmath>

namespace uslam {

namespace {

constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::vector<double> gaussian_kernel(int radius, double sigma) {
    std::vector<double> k(2 * radius + 1);
    double sum = 0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += k[i + radius];
    }
    for (auto& v : k) v /= sum;
    return k;
}

}  // namespace

GridD gaussian_blur(const GridD& img, int radius, double sigma) {
    auto k = gaussian_kernel(radius, sigma);
    GridD tmp(img.h, img.w, img.c), out(img.h, img.w, img.c);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < img.c; ++c) {
                double s = 0;
                for (int i = -radius; i <= radius; ++i) {
                    int xx = x + i;
                    if (xx >= 0 && xx < img.w) s += k[i + radius] * img.at(y, xx, c);
                }
                tmp.at(y, x, c) = s;
            }
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < img.c; ++c) {
                double s = 0;
                for (int i = -radius; i <= radius; ++i) {
                    int yy = y + i;
                    if (yy >= 0 && yy < img.h) s += k[i + radius] * tmp.at(yy, x, c);
                }
                out.at(y, x, c) = s;
            }
    return out;
}

GridD to_grayscale(const GridD& img) {
    if (img.c == 1) return img;
    GridD g(img.h, img.w, 1);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            double s = 0;
            for (int c = 0; c < img.c; ++c) s += img.at(y, x, c);
            g.at(y, x) = s / img.c;
        }
    return g;
}

SsimContext ssim_map(const GridD& a_in, const GridD& b_in) {
    require_same_shape(a_in, b_in, "ssim: shape mismatch");
    SsimContext ctx;
    ctx.a = to_grayscale(a_in);
    ctx.b = to_grayscale(b_in);
    ctx.mu_a = gaussian_blur(ctx.a);
    ctx.mu_b = gaussian_blur(ctx.b);

    GridD aa(ctx.a.h, ctx.a.w), bb(ctx.a.h, ctx.a.w), ab(ctx.a.h, ctx.a.w);
    for (size_t i = 0; i < ctx.a.size(); ++i) {
        aa.data[i] = ctx.a.data[i] * ctx.a.data[i];
        bb.data[i] = ctx.b.data[i] * ctx.b.data[i];
        ab.data[i] = ctx.a.data[i] * ctx.b.data[i];
    }
    ctx.var_a = gaussian_blur(aa);
    ctx.var_b = gaussian_blur(bb);
    ctx.cov = gaussian_blur(ab);
    ctx.map = GridD(ctx.a.h, ctx.a.w);
    for (size_t i = 0; i < ctx.a.size(); ++i) {
        double ma = ctx.mu_a.data[i], mb = ctx.mu_b.data[i];
        ctx.var_a.data[i] -= ma * ma;
        ctx.var_b.data[i] -= mb * mb;
        ctx.cov.data[i] -= ma * mb;
        double a1 = 2 * ma * mb + kC1;
        double a2 = 2 * ctx.cov.data[i] + kC2;
        double b1 = ma * ma + mb * mb + kC1;
        double b2 = ctx.var_a.data[i] + ctx.var_b.data[i] + kC2;
        ctx.map.data[i] = (a1 * a2) / (b1 * b2);
    }
    return ctx;
}

double ssim_mean(const GridD& a, const GridD& b) {
    auto ctx = ssim_map(a, b);
    double s = 0;
    for (double v : ctx.map.data) s += v;
    return s / double(ctx.map.size());
}

GridD ssim_backward(const SsimContext& ctx, const GridD& grad_map) {
    const int h = ctx.a.h, w = ctx.a.w;
    // Pointwise gradients of S w.r.t. mu_a, blurred(a^2), blurred(ab).
    GridD t_mu(h, w), t_aa(h, w), t_ab(h, w);
    for (size_t i = 0; i < ctx.a.size(); ++i) {
        double ma = ctx.mu_a.data[i], mb = ctx.mu_b.data[i];
        double a1 = 2 * ma * mb + kC1;
        double a2 = 2 * ctx.cov.data[i] + kC2;
        double b1 = ma * ma + mb * mb + kC1;
        double b2 = ctx.var_a.data[i] + ctx.var_b.data[i] + kC2;
        double s = (a1 * a2) / (b1 * b2);
        double dS_dA1 = a2 / (b1 * b2);
        double dS_dA2 = a1 / (b1 * b2);
        double dS_dB1 = -s / b1;
        double dS_dB2 = -s / b2;
        double g = grad_map.data[i];
        // var_a = blur(a^2) - mu_a^2; cov = blur(ab) - mu_a mu_b
        double dS_dmu = dS_dA1 * 2 * mb + dS_dB1 * 2 * ma + dS_dB2 * (-2 * ma) +
                        2 * dS_dA2 * (-mb);
        t_mu.data[i] = g * dS_dmu;
        t_aa.data[i] = g * dS_dB2;
        t_ab.data[i] = g * 2 * dS_dA2;
    }
    // Adjoint of the (symmetric, zero-padded) blur is the blur itself.
    GridD b_mu = gaussian_blur(t_mu);
    GridD b_aa = gaussian_blur(t_aa);
    GridD b_ab = gaussian_blur(t_ab);
    GridD grad(h, w);
    for (size_t i = 0; i < grad.size(); ++i)
        grad.data[i] = b_mu.data[i] + 2 * ctx.a.data[i] * b_aa.data[i] +
                       ctx.b.data[i] * b_ab.data[i];
    return grad;
}

}  // namespace uslam

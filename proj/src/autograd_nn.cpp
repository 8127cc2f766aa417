#include <Eigen/Core>

#include <memory>

#include "powergan/autograd.hpp"
#include "powergan/errors.hpp"
#include "autograd_internal.hpp"

namespace powergan::ad {

using detail::make_op;
using detail::require;

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

// col[(ci*K + k), (b*L + t)] = x[b, ci, t + k - pad], zero outside [0, L).
template <class T>
RowMat<T> im2col(const Tensor<T>& x, std::int64_t kernel) {
    const auto b = x.dim(0), cin = x.dim(1), len = x.dim(2);
    const auto pad = (kernel - 1) / 2;
    RowMat<T> col = RowMat<T>::Zero(cin * kernel, b * len);
    for (std::int64_t ci = 0; ci < cin; ++ci) {
        for (std::int64_t k = 0; k < kernel; ++k) {
            T* row = col.data() + (ci * kernel + k) * (b * len);
            const std::int64_t shift = k - pad;
            const std::int64_t t0 = std::max<std::int64_t>(0, -shift);
            const std::int64_t t1 = std::min<std::int64_t>(len, len - shift);
            for (std::int64_t bi = 0; bi < b; ++bi) {
                const T* src = x.data.data() + (bi * cin + ci) * len;
                T* dst = row + bi * len;
                for (std::int64_t t = t0; t < t1; ++t) dst[t] = src[t + shift];
            }
        }
    }
    return col;
}

// [B, C, L] <-> [C, B*L]
template <class T>
RowMat<T> channels_major(const Tensor<T>& g) {
    const auto b = g.dim(0), c = g.dim(1), len = g.dim(2);
    RowMat<T> m(c, b * len);
    for (std::int64_t bi = 0; bi < b; ++bi)
        for (std::int64_t ci = 0; ci < c; ++ci)
            std::copy_n(g.data.data() + (bi * c + ci) * len, len, m.data() + ci * (b * len) + bi * len);
    return m;
}

template <class T>
Tensor<T> batch_major(const RowMat<T>& m, std::int64_t b, std::int64_t len) {
    const auto c = m.rows();
    Tensor<T> out(Shape{b, c, len});
    for (std::int64_t bi = 0; bi < b; ++bi)
        for (std::int64_t ci = 0; ci < c; ++ci)
            std::copy_n(m.data() + ci * (b * len) + bi * len, len, out.data.data() + (bi * c + ci) * len);
    return out;
}

using Indices = std::shared_ptr<const std::vector<std::uint8_t>>;

template <class T> Var<T> unpool2(const Var<T>& g, Indices idx);
template <class T> Var<T> gather2(const Var<T>& g, Indices idx);

// Places g[..., i] at position 2i + idx[i]; zero elsewhere.
template <class T>
Var<T> unpool2(const Var<T>& g, Indices idx) {
    const auto b = g.dim(0), c = g.dim(1), half = g.dim(2);
    Tensor<T> out(Shape{b, c, half * 2});
    const auto& gv = g.value().data;
    for (std::int64_t i = 0; i < b * c * half; ++i) out.data[2 * i + (*idx)[i]] = gv[i];
    return make_op<T>(std::move(out), {g}, [idx](const Var<T>& gg, const std::vector<bool>&) {
        return std::vector<Var<T>>{gather2(gg, idx)};
    });
}

template <class T>
Var<T> gather2(const Var<T>& g, Indices idx) {
    const auto b = g.dim(0), c = g.dim(1), half = g.dim(2) / 2;
    Tensor<T> out(Shape{b, c, half});
    const auto& gv = g.value().data;
    for (std::int64_t i = 0; i < b * c * half; ++i) out.data[i] = gv[2 * i + (*idx)[i]];
    return make_op<T>(std::move(out), {g}, [idx](const Var<T>& gg, const std::vector<bool>&) {
        return std::vector<Var<T>>{unpool2(gg, idx)};
    });
}

}  // namespace

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    require(a.shape().size() == 2 && b.shape().size() == 2 && a.dim(1) == b.dim(0),
            "matmul " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    Tensor<T> out(Shape{a.dim(0), b.dim(1)});
    MapMat<T>(out.data.data(), a.dim(0), b.dim(1)).noalias() =
        CMapMat<T>(a.value().data.data(), a.dim(0), a.dim(1)) * CMapMat<T>(b.value().data.data(), b.dim(0), b.dim(1));
    return make_op<T>(std::move(out), {a, b}, [a, b](const Var<T>& g, const std::vector<bool>& needs) {
        std::vector<Var<T>> r(2);
        if (needs[0]) r[0] = matmul(g, transpose(b));
        if (needs[1]) r[1] = matmul(transpose(a), g);
        return r;
    });
}

template <class T>
Var<T> transpose(const Var<T>& a) {
    require(a.shape().size() == 2, "transpose expects rank 2");
    const auto r = a.dim(0), c = a.dim(1);
    Tensor<T> out(Shape{c, r});
    MapMat<T>(out.data.data(), c, r) = CMapMat<T>(a.value().data.data(), r, c).transpose();
    return make_op<T>(std::move(out), {a}, [](const Var<T>& g, const std::vector<bool>&) {
        return std::vector<Var<T>>{transpose(g)};
    });
}

template <class T>
Var<T> conv1d(const Var<T>& x, const Var<T>& w) {
    require(x.shape().size() == 3 && w.shape().size() == 3 && x.dim(1) == w.dim(1) && w.dim(2) % 2 == 1,
            "conv1d x " + shape_str(x.shape()) + " w " + shape_str(w.shape()));
    const auto b = x.dim(0), len = x.dim(2), cout = w.dim(0), cin = w.dim(1), kernel = w.dim(2);
    const RowMat<T> col = im2col(x.value(), kernel);
    RowMat<T> y(cout, b * len);
    y.noalias() = CMapMat<T>(w.value().data.data(), cout, cin * kernel) * col;
    return make_op<T>(batch_major(y, b, len), {x, w}, [x, w, kernel](const Var<T>& g, const std::vector<bool>& needs) {
        std::vector<Var<T>> r(2);
        if (needs[0]) r[0] = conv1d(g, flip_transpose(w));
        if (needs[1]) r[1] = conv1d_weight_grad(x, g, kernel);
        return r;
    });
}

template <class T>
Var<T> conv1d_weight_grad(const Var<T>& x, const Var<T>& g, std::int64_t kernel) {
    require(x.shape().size() == 3 && g.shape().size() == 3 && x.dim(0) == g.dim(0) && x.dim(2) == g.dim(2),
            "conv1d_weight_grad x " + shape_str(x.shape()) + " g " + shape_str(g.shape()));
    const auto cin = x.dim(1), cout = g.dim(1);
    const RowMat<T> col = im2col(x.value(), kernel);
    const RowMat<T> gm = channels_major(g.value());
    Tensor<T> out(Shape{cout, cin, kernel});
    MapMat<T>(out.data.data(), cout, cin * kernel).noalias() = gm * col.transpose();
    return make_op<T>(std::move(out), {x, g}, [x, g](const Var<T>& gw, const std::vector<bool>& needs) {
        std::vector<Var<T>> r(2);
        if (needs[0]) r[0] = conv1d(g, flip_transpose(gw));
        if (needs[1]) r[1] = conv1d(x, gw);
        return r;
    });
}

template <class T>
Var<T> flip_transpose(const Var<T>& w) {
    require(w.shape().size() == 3, "flip_transpose expects rank 3");
    const auto cout = w.dim(0), cin = w.dim(1), kernel = w.dim(2);
    Tensor<T> out(Shape{cin, cout, kernel});
    const auto& src = w.value().data;
    for (std::int64_t o = 0; o < cout; ++o)
        for (std::int64_t i = 0; i < cin; ++i)
            for (std::int64_t k = 0; k < kernel; ++k)
                out.data[(i * cout + o) * kernel + (kernel - 1 - k)] = src[(o * cin + i) * kernel + k];
    return make_op<T>(std::move(out), {w}, [](const Var<T>& g, const std::vector<bool>&) {
        return std::vector<Var<T>>{flip_transpose(g)};
    });
}

template <class T>
Var<T> upsample2(const Var<T>& x) {
    require(x.shape().size() == 3, "upsample2 expects [B, C, L]");
    const auto rows = x.dim(0) * x.dim(1), len = x.dim(2);
    Tensor<T> out(Shape{x.dim(0), x.dim(1), len * 2});
    const auto& src = x.value().data;
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t t = 0; t < len; ++t) {
            const T v = src[r * len + t];
            out.data[r * 2 * len + 2 * t] = v;
            out.data[r * 2 * len + 2 * t + 1] = v;
        }
    return make_op<T>(std::move(out), {x}, [](const Var<T>& g, const std::vector<bool>&) {
        return std::vector<Var<T>>{pair_sum(g)};
    });
}

template <class T>
Var<T> pair_sum(const Var<T>& x) {
    require(x.shape().size() == 3 && x.dim(2) % 2 == 0, "pair_sum expects [B, C, 2L], got " + shape_str(x.shape()));
    const auto n = static_cast<std::int64_t>(x.numel()) / 2;
    Tensor<T> out(Shape{x.dim(0), x.dim(1), x.dim(2) / 2});
    const auto& src = x.value().data;
    for (std::int64_t i = 0; i < n; ++i) out.data[i] = src[2 * i] + src[2 * i + 1];
    return make_op<T>(std::move(out), {x}, [](const Var<T>& g, const std::vector<bool>&) {
        return std::vector<Var<T>>{upsample2(g)};
    });
}

template <class T>
Var<T> maxpool2(const Var<T>& x) {
    require(x.shape().size() == 3 && x.dim(2) % 2 == 0, "maxpool2 expects [B, C, 2L], got " + shape_str(x.shape()));
    const auto n = static_cast<std::int64_t>(x.numel()) / 2;
    Tensor<T> out(Shape{x.dim(0), x.dim(1), x.dim(2) / 2});
    auto idx = std::make_shared<std::vector<std::uint8_t>>(static_cast<std::size_t>(n));
    const auto& src = x.value().data;
    for (std::int64_t i = 0; i < n; ++i) {
        const bool second = src[2 * i + 1] > src[2 * i];
        (*idx)[i] = second ? 1 : 0;
        out.data[i] = second ? src[2 * i + 1] : src[2 * i];
    }
    Indices shared = idx;
    return make_op<T>(std::move(out), {x}, [shared](const Var<T>& g, const std::vector<bool>&) {
        return std::vector<Var<T>>{unpool2(g, shared)};
    });
}

template <class T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
    require(!parts.empty(), "concat_channels of nothing");
    const auto b = parts[0].dim(0), len = parts[0].dim(2);
    std::int64_t total = 0;
    for (const auto& p : parts) {
        require(p.shape().size() == 3 && p.dim(0) == b && p.dim(2) == len,
                "concat_channels shape mismatch " + shape_str(p.shape()));
        total += p.dim(1);
    }
    Tensor<T> out(Shape{b, total, len});
    std::int64_t offset = 0;
    std::vector<std::int64_t> starts;
    for (const auto& p : parts) {
        starts.push_back(offset);
        const auto c = p.dim(1);
        for (std::int64_t bi = 0; bi < b; ++bi)
            std::copy_n(p.value().data.data() + bi * c * len, c * len,
                        out.data.data() + (bi * total + offset) * len);
        offset += c;
    }
    std::vector<std::int64_t> counts;
    for (const auto& p : parts) counts.push_back(p.dim(1));
    return make_op<T>(std::move(out), parts, [starts, counts](const Var<T>& g, const std::vector<bool>& needs) {
        std::vector<Var<T>> r(starts.size());
        for (std::size_t i = 0; i < starts.size(); ++i)
            if (needs[i]) r[i] = slice_channels(g, starts[i], counts[i]);
        return r;
    });
}

template <class T>
Var<T> slice_channels(const Var<T>& x, std::int64_t start, std::int64_t count) {
    require(x.shape().size() == 3 && start >= 0 && start + count <= x.dim(1), "slice_channels out of range");
    const auto b = x.dim(0), c = x.dim(1), len = x.dim(2);
    Tensor<T> out(Shape{b, count, len});
    for (std::int64_t bi = 0; bi < b; ++bi)
        std::copy_n(x.value().data.data() + (bi * c + start) * len, count * len, out.data.data() + bi * count * len);
    return make_op<T>(std::move(out), {x}, [start, count, c](const Var<T>& g, const std::vector<bool>&) {
        return std::vector<Var<T>>{pad_channels(g, start, c - start - count)};
    });
}

template <class T>
Var<T> pad_channels(const Var<T>& x, std::int64_t before, std::int64_t after) {
    require(x.shape().size() == 3, "pad_channels expects [B, C, L]");
    const auto b = x.dim(0), c = x.dim(1), len = x.dim(2), total = before + c + after;
    Tensor<T> out(Shape{b, total, len});
    for (std::int64_t bi = 0; bi < b; ++bi)
        std::copy_n(x.value().data.data() + bi * c * len, c * len, out.data.data() + (bi * total + before) * len);
    return make_op<T>(std::move(out), {x}, [before, c](const Var<T>& g, const std::vector<bool>&) {
        return std::vector<Var<T>>{slice_channels(g, before, c)};
    });
}

#define POWERGAN_INSTANTIATE(T)                                                                  \
    template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                                     \
    template Var<T> transpose<T>(const Var<T>&);                                                 \
    template Var<T> conv1d<T>(const Var<T>&, const Var<T>&);                                     \
    template Var<T> conv1d_weight_grad<T>(const Var<T>&, const Var<T>&, std::int64_t);           \
    template Var<T> flip_transpose<T>(const Var<T>&);                                            \
    template Var<T> upsample2<T>(const Var<T>&);                                                 \
    template Var<T> pair_sum<T>(const Var<T>&);                                                  \
    template Var<T> maxpool2<T>(const Var<T>&);                                                  \
    template Var<T> concat_channels<T>(const std::vector<Var<T>>&);                              \
    template Var<T> slice_channels<T>(const Var<T>&, std::int64_t, std::int64_t);                \
    template Var<T> pad_channels<T>(const Var<T>&, std::int64_t, std::int64_t);

POWERGAN_INSTANTIATE(float)
POWERGAN_INSTANTIATE(double)

#undef POWERGAN_INSTANTIATE

}  // namespace powergan::ad

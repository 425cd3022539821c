#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "vfs3d/nn/ops.hpp"

namespace vfs3d::nn {

/// Queries in `queries` attend only to keys in `keys`. Used both for one
/// dense cross-attention block and for many disjoint serialized groups.
struct AttentionBlock {
  std::vector<std::size_t> queries;
  std::vector<std::size_t> keys;
};

/// Per-(block, head) attention matrices, row-major nq x nk.
struct AttentionWeights {
  std::vector<std::size_t> rows, cols;
  std::vector<std::vector<real>> data;
};

/// Multi-head scaled dot-product attention core on already-projected Q/K/V.
/// q: Nq x D, k and v: Nk x D, D divisible by `heads`. Keys with mask 0 get
/// exactly zero weight. Query rows outside every block produce zeros.
inline Var attention(const Var& q, const Var& k, const Var& v, std::size_t heads,
                     std::vector<AttentionBlock> blocks, std::span<const std::uint8_t> key_mask = {},
                     AttentionWeights* weights_out = nullptr) {
  detail::expect_rank(q, 2, "attention");
  detail::expect_rank(k, 2, "attention");
  detail::expect_rank(v, 2, "attention");
  const auto nq = q.dim(0), nk = k.dim(0), d = q.dim(1);
  if (k.dim(1) != d || v.dim(1) != d || v.dim(0) != nk) throw detail::mismatch("attention", q, k);
  if (heads == 0 || d % heads != 0)
    throw ConfigError("attention: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  if (!key_mask.empty() && key_mask.size() != nk) throw ShapeError("attention: key mask length mismatch");
  for (const auto& b : blocks) {
    for (auto i : b.queries)
      if (i >= nq) throw ShapeError("attention: query index out of range");
    for (auto j : b.keys)
      if (j >= nk) throw ShapeError("attention: key index out of range");
  }
  const std::size_t dh = d / heads;
  const real inv_scale = real(1) / std::sqrt(static_cast<real>(dh));
  const auto qv = q.value(), kv = k.value(), vv = v.value();

  auto load = [](std::span<const real> src, const std::vector<std::size_t>& rows, std::size_t width,
                 std::size_t col0, std::size_t cols) {
    RowMat m(rows.size(), cols);
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t c = 0; c < cols; ++c) m(r, c) = src[rows[r] * width + col0 + c];
    return m;
  };

  std::vector<real> out(nq * d, real(0));
  // Masked keys are dropped before any arithmetic, so a masked key
  // contributes no term at all (not even a zero-weighted one).
  std::vector<std::vector<std::size_t>> kept(blocks.size());
  std::vector<RowMat> probs;  // one per (block, head), nq x kept
  probs.reserve(blocks.size() * heads);
  for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
    const auto& b = blocks[bi];
    for (auto j : b.keys)
      if (key_mask.empty() || key_mask[j]) kept[bi].push_back(j);
    if (!b.queries.empty() && kept[bi].empty()) throw ShapeError("attention: block with no unmasked keys");
    for (std::size_t hd = 0; hd < heads; ++hd) {
      const RowMat qb = load(qv, b.queries, d, hd * dh, dh);
      const RowMat kb = load(kv, kept[bi], d, hd * dh, dh);
      const RowMat vb = load(vv, kept[bi], d, hd * dh, dh);
      RowMat a = (qb * kb.transpose()) * inv_scale;
      for (Eigen::Index r = 0; r < a.rows(); ++r) {
        const real mx = a.row(r).maxCoeff();
        a.row(r) = (a.row(r).array() - mx).exp().matrix();
        a.row(r) /= a.row(r).sum();
      }
      const RowMat ob = a * vb;
      for (std::size_t r = 0; r < b.queries.size(); ++r)
        for (std::size_t c = 0; c < dh; ++c) out[b.queries[r] * d + hd * dh + c] = ob(r, c);
      if (weights_out) {
        std::vector<real> full(b.queries.size() * b.keys.size(), real(0));
        for (Eigen::Index r = 0; r < a.rows(); ++r) {
          Eigen::Index kc = 0;
          for (std::size_t j = 0; j < b.keys.size(); ++j)
            if (key_mask.empty() || key_mask[b.keys[j]]) full[static_cast<std::size_t>(r) * b.keys.size() + j] = a(r, kc++);
        }
        weights_out->rows.push_back(b.queries.size());
        weights_out->cols.push_back(b.keys.size());
        weights_out->data.push_back(std::move(full));
      }
      probs.push_back(std::move(a));
    }
  }

  return make_result(
      {nq, d}, std::move(out), {q, k, v},
      [blocks = std::move(blocks), kept = std::move(kept), probs = std::move(probs), heads, dh, d, inv_scale,
       load](Node& s) {
        auto* gq = parent_grad(s, 0);
        auto* gk = parent_grad(s, 1);
        auto* gv = parent_grad(s, 2);
        const auto& qv = parent_value(s, 0);
        const auto& kv = parent_value(s, 1);
        const auto& vv = parent_value(s, 2);
        std::size_t p = 0;
        for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
          const auto& b = blocks[bi];
          const auto& keys = kept[bi];
          for (std::size_t hd = 0; hd < heads; ++hd, ++p) {
            const RowMat& a = probs[p];
            const RowMat go = load(s.grad, b.queries, d, hd * dh, dh);
            if (gv) {
              const RowMat dv = a.transpose() * go;
              for (std::size_t r = 0; r < keys.size(); ++r)
                for (std::size_t c = 0; c < dh; ++c) (*gv)[keys[r] * d + hd * dh + c] += dv(r, c);
            }
            if (!gq && !gk) continue;
            const RowMat vb = load(vv, keys, d, hd * dh, dh);
            const RowMat da = go * vb.transpose();
            RowMat ds = a.cwiseProduct(da);
            for (Eigen::Index r = 0; r < ds.rows(); ++r) {
              const real dot = ds.row(r).sum();
              ds.row(r) -= dot * a.row(r);
            }
            ds *= inv_scale;
            if (gq) {
              const RowMat kb = load(kv, keys, d, hd * dh, dh);
              const RowMat dq = ds * kb;
              for (std::size_t r = 0; r < b.queries.size(); ++r)
                for (std::size_t c = 0; c < dh; ++c) (*gq)[b.queries[r] * d + hd * dh + c] += dq(r, c);
            }
            if (gk) {
              const RowMat qb = load(qv, b.queries, d, hd * dh, dh);
              const RowMat dk = ds.transpose() * qb;
              for (std::size_t r = 0; r < keys.size(); ++r)
                for (std::size_t c = 0; c < dh; ++c) (*gk)[keys[r] * d + hd * dh + c] += dk(r, c);
            }
          }
        }
      });
}

/// One block covering every query and key.
inline AttentionBlock dense_block(std::size_t nq, std::size_t nk) {
  AttentionBlock b;
  b.queries.resize(nq);
  b.keys.resize(nk);
  for (std::size_t i = 0; i < nq; ++i) b.queries[i] = i;
  for (std::size_t j = 0; j < nk; ++j) b.keys[j] = j;
  return b;
}

}  // namespace vfs3d::nn

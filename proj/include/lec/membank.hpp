#pragma once

// Memory-bank prototype learning: the bank M holds one prototype row per
// category (row 0 = normal). augment_text runs m full self-attention blocks
// over [F_tv; M] and keeps the first C+1 rows; M itself sits outside
// backpropagation and changes only through the momentum update.

#include <lec/encoder.hpp>
#include <lec/tape.hpp>

#include <vector>

namespace lec {

template <typename S>
struct MemoryBank {
  Mat<S> M;  // (C+1) x d
  S eta = S(0.99);
};

template <typename S>
MemoryBank<S> init_bank(const Mat<S>& f_text, S eta) {
  detail::require(eta >= S(0) && eta <= S(1), "init_bank: eta must be in [0,1]");
  return MemoryBank<S>{f_text, eta};
}

// F_cte = [F_tv; M], m blocks of full self-attention, F_aug = first C+1 rows.
// M enters as a tape constant, so no gradient reaches it.
template <typename S>
Var<S> augment_text(Var<S> f_tv, const MemoryBank<S>& bank,
                    const std::vector<BlockVars<S>>& blocks, int heads) {
  detail::require(f_tv.rows() == bank.M.rows() && f_tv.cols() == bank.M.cols(),
                  "augment_text: F_tv and bank shapes differ");
  Tape<S>& t = *f_tv.tape;
  Var<S> cte = concat_rows(f_tv, t.constant(bank.M));
  for (const auto& blk : blocks) cte = transformer_block(cte, blk, heads);
  return slice_rows(cte, 0, f_tv.rows());
}

// M <- eta * M + (1 - eta) * F_aug, with F_aug a detached value snapshot.
template <typename S>
void momentum_update(MemoryBank<S>& bank, const Mat<S>& f_aug) {
  detail::require(f_aug.rows() == bank.M.rows() && f_aug.cols() == bank.M.cols(),
                  "momentum_update: shape mismatch");
  bank.M = bank.eta * bank.M + (S(1) - bank.eta) * f_aug;
}

}  // namespace lec

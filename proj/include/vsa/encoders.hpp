#pragma once

#include <fstream>

#include "vsa/nn.hpp"
#include "vsa/vocab.hpp"

namespace vsa {

// Standard GRU cell: sigmoid update/reset gates, tanh candidate with the
// reset gate applied to the recurrent contribution.
template <typename T>
struct GruCell {
  Tensor<T> wxz, whz, bxz, bhz;
  Tensor<T> wxr, whr, bxr, bhr;
  Tensor<T> wxn, whn, bxn, bhn;
  size_t in = 0, d = 0;

  GruCell() = default;
  GruCell(size_t input, size_t hidden, Rng& rng) : in(input), d(hidden) {
    auto w_in = [&] { return init_fan_in<T>({input, hidden}, input, rng); };
    auto w_hid = [&] { return init_fan_in<T>({hidden, hidden}, hidden, rng); };
    auto b = [&] { return Tensor<T>::zeros({hidden}, true); };
    wxz = w_in(); whz = w_hid(); bxz = b(); bhz = b();
    wxr = w_in(); whr = w_hid(); bxr = b(); bhr = b();
    wxn = w_in(); whn = w_hid(); bxn = b(); bhn = b();
  }

  // x: [B, in], h: [B, d] -> new hidden [B, d]
  Tensor<T> step(const Tensor<T>& x, const Tensor<T>& h) const {
    Tensor<T> z = sigmoid(add(add(matmul(x, wxz), bxz), add(matmul(h, whz), bhz)));
    Tensor<T> r = sigmoid(add(add(matmul(x, wxr), bxr), add(matmul(h, whr), bhr)));
    Tensor<T> n = tanh(add(add(matmul(x, wxn), bxn),
                           mul(r, add(matmul(h, whn), bhn))));
    Tensor<T> one = Tensor<T>::scalar(T(1));
    return add(mul(sub(one, z), n), mul(z, h));
  }

  void collect(ParamSet<T>& ps, const std::string& name) const {
    ps.add(name + ".wxz", wxz); ps.add(name + ".whz", whz);
    ps.add(name + ".bxz", bxz); ps.add(name + ".bhz", bhz);
    ps.add(name + ".wxr", wxr); ps.add(name + ".whr", whr);
    ps.add(name + ".bxr", bxr); ps.add(name + ".bhr", bhr);
    ps.add(name + ".wxn", wxn); ps.add(name + ".whn", whn);
    ps.add(name + ".bxn", bxn); ps.add(name + ".bhn", bhn);
  }
};

template <typename T>
struct GruParams {
  GruCell<T> fwd, bwd;
  size_t in = 0, d = 0;

  GruParams() = default;
  GruParams(size_t input, size_t hidden, Rng& rng)
      : fwd(input, hidden, rng), bwd(input, hidden, rng), in(input), d(hidden) {}

  void collect(ParamSet<T>& ps, const std::string& name) const {
    fwd.collect(ps, name + ".fwd");
    bwd.collect(ps, name + ".bwd");
  }
};

// Bi-directional GRU text encoder: per position the average of forward and
// backward hidden states. The recurrences apply masked state updates, so the
// backward pass effectively runs over the reversed valid prefix and padding
// never leaks into any valid output.
template <typename T>
SequenceBatch<T> encode_text(const GruParams<T>& gru, const Tensor<T>& embeddings,
                             const std::vector<int64_t>& token_ids, size_t batch,
                             size_t len, const std::vector<size_t>& lengths) {
  if (len == 0) throw DomainError("encode_text: empty sequence batch");
  for (size_t b = 0; b < batch; ++b)
    if (lengths[b] == 0)
      throw DomainError("encode_text: empty sequence in batch row " +
                        std::to_string(b));
  Tensor<T> emb = embedding_lookup(embeddings, token_ids, {batch, len});
  Tensor<T> mask = SequenceBatch<T>::mask_from_lengths(batch, len, lengths);
  Tensor<T> one = Tensor<T>::scalar(T(1));

  std::vector<Tensor<T>> xs(len), ms(len);
  for (size_t t = 0; t < len; ++t) {
    xs[t] = reshape(slice(emb, 1, t, 1), {batch, gru.in});
    ms[t] = slice(mask, 1, t, 1);  // [B,1]
  }

  std::vector<Tensor<T>> h_fwd(len), h_bwd(len);
  Tensor<T> h = Tensor<T>::zeros({batch, gru.d});
  for (size_t t = 0; t < len; ++t) {
    Tensor<T> hc = gru.fwd.step(xs[t], h);
    h = add(mul(hc, ms[t]), mul(h, sub(one, ms[t])));
    h_fwd[t] = h;
  }
  h = Tensor<T>::zeros({batch, gru.d});
  for (size_t t = len; t-- > 0;) {
    Tensor<T> hc = gru.bwd.step(xs[t], h);
    h = add(mul(hc, ms[t]), mul(h, sub(one, ms[t])));
    h_bwd[t] = h;
  }

  std::vector<Tensor<T>> rows(len);
  for (size_t t = 0; t < len; ++t)
    rows[t] = reshape(scale(add(h_fwd[t], h_bwd[t]), 0.5), {batch, 1, gru.d});
  return SequenceBatch<T>(len == 1 ? rows[0] : concat(rows, 1), mask);
}

// Row-wise linear projection of precomputed region features to width d.
template <typename T>
SequenceBatch<T> encode_regions(const Linear<T>& proj, const Tensor<T>& regions,
                                const Tensor<T>& mask) {
  if (regions.rank() != 3)
    throw ShapeError("encode_regions: expected [B, R, feat], got " +
                     shape_str(regions.shape()));
  if (regions.dim(2) != proj.weight.dim(0))
    throw ShapeError("encode_regions: feature width " +
                     std::to_string(regions.dim(2)) +
                     " does not match projection input " +
                     std::to_string(proj.weight.dim(0)));
  return SequenceBatch<T>(proj(regions), mask);
}

template <typename T>
SequenceBatch<T> encode_regions(const Linear<T>& proj, const Tensor<T>& regions) {
  return encode_regions(proj, regions,
                        Tensor<T>::full({regions.dim(0), regions.dim(1)}, T(1)));
}

// Word-vector text format: one token plus `dim` space-separated decimals per
// line. Rows for in-vocabulary tokens are copied; everything else keeps its
// uniform(-0.1, 0.1) initialization. Trainable iff finetune.
template <typename T>
Tensor<T> load_pretrained_embeddings(const std::string& path,
                                     const Vocabulary& vocab, size_t dim,
                                     bool finetune, Rng& rng) {
  Tensor<T> table = init_uniform<T>({vocab.size(), dim}, -0.1, 0.1, rng);
  table.set_requires_grad(finetune);
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open embedding file: " + path);
  std::string line;
  size_t line_no = 0;
  bool width_checked = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string tok;
    ss >> tok;
    std::vector<T> vals;
    vals.reserve(dim + 1);
    double v;
    while (ss >> v) vals.push_back(static_cast<T>(v));
    if (!ss.eof())
      throw ParseError("embedding file line " + std::to_string(line_no) +
                       ": malformed value");
    if (vals.empty())
      throw ParseError("embedding file line " + std::to_string(line_no) +
                       ": no values");
    if (!width_checked) {
      if (vals.size() != dim)
        throw ConfigError("embedding file width " + std::to_string(vals.size()) +
                          " does not match configured dimension " +
                          std::to_string(dim));
      width_checked = true;
    } else if (vals.size() != dim) {
      throw ParseError("embedding file line " + std::to_string(line_no) +
                       ": expected " + std::to_string(dim) + " values, got " +
                       std::to_string(vals.size()));
    }
    if (vocab.contains(tok)) {
      size_t row = static_cast<size_t>(vocab.index(tok));
      auto d = table.data_mut();
      for (size_t c = 0; c < dim; ++c) d[row * dim + c] = vals[c];
    }
  }
  return table;
}

}  // namespace vsa

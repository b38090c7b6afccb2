#pragma once

#include "spd/common.hpp"
#include "spd/rng.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace spd {

// Seeded order-2 Markov token source. Each (a, b) context has a small
// categorical support so the full transition structure stays in memory and
// the stationary distribution is computable by power iteration. On top of
// the Markov stream, key/recall templates can be injected:
//
//   ... m_open k0 k1 k2 k3 m_close ... m_open k0 k1 k2 k3 m_close ...
//
// i.e. the same 4-token key appears twice with a gap, so a trained model
// can learn to reproduce a key after re-seeing the opening marker. The last
// two vocabulary ids are reserved as the markers.
struct CorpusConfig {
    int vocab_size = 256;
    int active_tokens = 24;       // the chain lives on ids [0, active_tokens)
    int support = 4;              // successors per (a, b) context
    double concentration = 0.4;   // weight spread over the support
    double template_rate = 0.25;  // probability of a key template per chunk
    int chunk_len = 96;           // template insertion granularity
    int key_len = 4;
    int key_alphabet = 24;        // key tokens drawn from [0, key_alphabet)
    bool sequential_keys = false; // keys step by +1 mod alphabet from a random start
    int gap_min = 8;              // filler tokens between the two key copies
    int gap_max = 48;
    uint64_t seed = 1;
};

class MarkovSource {
public:
    explicit MarkovSource(const CorpusConfig & cfg);

    const CorpusConfig & config() const { return cfg_; }
    int marker_open() const { return cfg_.vocab_size - 2; }
    int marker_close() const { return cfg_.vocab_size - 1; }

    // next-token draw given the last two tokens
    int step(int a, int b, Rng & rng) const;

    // pure Markov stream of n tokens (no templates)
    std::vector<int> sample_stream(int64_t n, Rng & rng) const;

    // stream with key templates injected at the configured rate
    std::vector<int> sample_corpus(int64_t n, Rng & rng) const;

    // stationary distribution over tokens of the pure Markov chain,
    // from power iteration over (a, b) pair states
    std::vector<double> stationary_distribution(int iters = 300) const;

    // entropy rate (nats/token) of the pure chain under its stationary law
    double entropy_rate() const;

private:
    CorpusConfig cfg_;
    int n_markov_;                         // tokens that take part in the chain
    std::vector<int> succ_;                // [n_markov^2 * support] successor ids
    std::vector<double> prob_;             // matching probabilities
    std::vector<double> cum_;              // cumulative, for sampling

    size_t ctx_index(int a, int b) const { return (size_t) a * n_markov_ + b; }
};

struct Corpus {
    std::vector<int> train;
    std::vector<int> heldout;
};

// 90/10 contiguous split
Corpus split_corpus(const std::vector<int> & tokens, double heldout_frac = 0.1);

// u16 little-endian token file
void write_tokens_u16(const std::string & path, const std::vector<int> & tokens);
std::vector<int> read_tokens_u16(const std::string & path);

} // namespace spd

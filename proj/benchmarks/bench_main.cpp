#include "gptc/decoder.hpp"
#include "gptc/suggest.hpp"
#include "gptc/synth.hpp"
#include "gptc/vocab.hpp"

#include <benchmark/benchmark.h>

using namespace gptc;

namespace {

const std::vector<lexnorm::TokenStream>& corpus_streams() {
    static const auto streams = [] {
        std::vector<lexnorm::TokenStream> out;
        for (const auto& f : synth::vocabulary_corpus(1)) {
            out.push_back(lexnorm::normalize(lexnorm::lex(f.source, f.language), lexnorm::LiteralTable{}));
        }
        return out;
    }();
    return streams;
}

const vocab::SubtokenVocabulary& corpus_vocab() {
    static const auto v = [] {
        vocab::TrainOptions o;
        o.target_size = 2000;
        return vocab::train_bpe(corpus_streams(), o);
    }();
    return v;
}

const model::ModelParams<float>& bench_params() {
    static const auto p = [] {
        model::ModelConfig c;
        c.n_layers = 2;
        c.d_model = 64;
        c.d_x = 64;
        c.n_heads = 4;
        c.n_ctx = 128;
        c.vocab_size = corpus_vocab().size();
        return model::init_params<float>(c, 1);
    }();
    return p;
}

void BM_TrainBpe(benchmark::State& state) {
    const auto& streams = corpus_streams();
    vocab::TrainOptions o;
    o.target_size = static_cast<std::size_t>(state.range(0));
    for (auto _ : state) {
        benchmark::DoNotOptimize(vocab::train_bpe(streams, o));
    }
}
BENCHMARK(BM_TrainBpe)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);

void BM_Encode(benchmark::State& state) {
    const auto& streams = corpus_streams();
    const auto& v = corpus_vocab();
    std::size_t ids = 0;
    for (auto _ : state) {
        for (const auto& s : streams) ids += vocab::encode(s, v).size();
    }
    state.counters["ids/s"] = benchmark::Counter(static_cast<double>(ids), benchmark::Counter::kIsRate);
}
BENCHMARK(BM_Encode)->Unit(benchmark::kMillisecond);

void BM_BeamTable(benchmark::State& state) {
    decoder::TableModel m(2000, 3, 4);
    decoder::DecodeRequest r;
    r.context_ids = {1, 2, 3};
    r.max_len = static_cast<std::size_t>(state.range(0));
    r.beam_width = static_cast<std::size_t>(state.range(1));
    r.mode = static_cast<decoder::Mode>(state.range(2));
    for (auto _ : state) {
        benchmark::DoNotOptimize(decoder::beam_search(m, r));
    }
}
BENCHMARK(BM_BeamTable)
    ->ArgsProduct({{10, 25}, {1, 5, 15}, {0, 1, 2}})
    ->ArgNames({"L", "k", "mode"})
    ->Unit(benchmark::kMicrosecond);

void BM_BeamTransformer(benchmark::State& state) {
    decoder::TransformerModel m(bench_params());
    decoder::DecodeRequest r;
    r.context_ids.assign(64, 10);
    r.max_len = 10;
    r.beam_width = 5;
    r.mode = static_cast<decoder::Mode>(state.range(0));
    for (auto _ : state) {
        benchmark::DoNotOptimize(decoder::beam_search(m, r));
    }
}
BENCHMARK(BM_BeamTransformer)->DenseRange(0, 2)->ArgName("mode")->Unit(benchmark::kMillisecond);

void BM_TriePruneTraverse(benchmark::State& state) {
    const auto& v = corpus_vocab();
    decoder::TransformerModel m(bench_params());
    decoder::DecodeRequest r;
    r.context_ids.assign(32, 10);
    r.max_len = 10;
    r.beam_width = 10;
    const auto res = decoder::beam_search(m, r);
    const auto trie = suggest::build_trie(res.hypotheses, v, Language::toy_py, nullptr, 4);
    const std::string first = trie.root.children.empty() ? std::string() : trie.root.children[0].text.substr(0, 1);
    for (auto _ : state) {
        auto pruned = suggest::prune_on_text(trie, first);
        benchmark::DoNotOptimize(suggest::traverse_greedy(pruned ? *pruned : trie, 0.8, 10.0));
    }
}
BENCHMARK(BM_TriePruneTraverse)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();

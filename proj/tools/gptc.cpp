#include "gptc/corpus.hpp"
#include "gptc/decoder.hpp"
#include "gptc/evalkit.hpp"
#include "gptc/lexnorm.hpp"
#include "gptc/model.hpp"
#include "gptc/ngram.hpp"
#include "gptc/pipeline.hpp"
#include "gptc/service.hpp"
#include "gptc/suggest.hpp"
#include "gptc/synth.hpp"
#include "gptc/vocab.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <iterator>
#include <sstream>

namespace fs = std::filesystem;
using namespace gptc;

namespace {

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open '" + path + "'");
    }
    return in;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot write '" + path + "'");
    }
    return out;
}

corpus::SplitManifest load_manifest(const std::string& path) {
    auto in = open_in(path);
    return corpus::read_manifest(in);
}

vocab::SubtokenVocabulary load_vocab(const std::string& path) {
    auto in = open_in(path);
    return vocab::read_vocabulary(in);
}

const std::vector<corpus::CorpusEntry>& split_entries(const corpus::SplitManifest& m, const std::string& name) {
    if (name == "train") return m.train;
    if (name == "validation") return m.validation;
    if (name == "test") return m.test;
    throw Error("unknown split '" + name + "'");
}

std::vector<pipeline::Document> load_documents(const corpus::SplitManifest& m, const std::string& split,
                                               const lexnorm::LiteralTable& table) {
    const auto lexed = pipeline::lex_entries(split_entries(m, split));
    for (const auto& w : lexed.warnings) {
        std::cerr << "warning: " << w << '\n';
    }
    return pipeline::normalize_all(lexed, table);
}

struct ModelFlags {
    std::size_t layers = 4;
    std::size_t d_model = 128;
    std::size_t heads = 4;
    std::size_t n_ctx = 128;
    double keep_prob = 0.9;
    std::string lang_mode = "none";
    double lambda = 0.5;
};

struct ScheduleFlags {
    std::size_t epochs = 10;
    std::size_t batch = 16;
    double lr = 1e-3;
    std::size_t warmup = 1;
    double decay = 0.98;
    bool cosine = false;
    std::size_t max_steps = 0;
    double target_loss = 0.0;
    std::uint64_t seed = 1;
};

void add_schedule_flags(CLI::App* cmd, ScheduleFlags& s) {
    cmd->add_option("--epochs", s.epochs);
    cmd->add_option("--batch", s.batch);
    cmd->add_option("--lr", s.lr);
    cmd->add_option("--warmup-epochs", s.warmup);
    cmd->add_option("--decay", s.decay);
    cmd->add_flag("--cosine", s.cosine);
    cmd->add_option("--max-steps", s.max_steps);
    cmd->add_option("--target-loss", s.target_loss);
    cmd->add_option("--seed", s.seed);
}

model::TrainSchedule to_schedule(const ScheduleFlags& f) {
    model::TrainSchedule s;
    s.epochs = f.epochs;
    s.batch_size = f.batch;
    s.base_lr = f.lr;
    s.warmup_epochs = f.warmup;
    s.decay = f.decay;
    s.cosine = f.cosine;
    s.max_steps = f.max_steps;
    s.target_loss = f.target_loss;
    s.seed = f.seed;
    return s;
}

void report_training(const model::TrainResult& r) {
    std::cerr << "steps=" << r.steps;
    if (!r.epoch_loss.empty()) {
        std::cerr << " final_epoch_loss=" << r.epoch_loss.back();
    }
    std::cerr << '\n';
    if (r.diverged) {
        std::cerr << "warning: " << r.message << '\n';
    }
}

void print_call_table(std::ostream& out, const std::vector<std::pair<std::pair<std::size_t, std::size_t>,
                                                                     decoder::ModeReport>>& rows) {
    out << std::left << std::setw(6) << "L" << std::setw(6) << "k" << std::setw(12) << "mode" << std::setw(8)
        << "calls" << std::setw(8) << "steps" << std::setw(8) << "rows"
        << "equivalent\n";
    for (const auto& [lk, rep] : rows) {
        for (const auto* r : {&rep.sequential, &rep.parallel, &rep.cached}) {
            out << std::setw(6) << lk.first << std::setw(6) << lk.second << std::setw(12)
                << decoder::to_string(r->stats.mode) << std::setw(8) << r->stats.model_calls << std::setw(8)
                << r->stats.steps << std::setw(8) << r->stats.rows << (rep.equivalent ? "yes" : "no") << '\n';
        }
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"gptc: code completion pipeline"};
    app.require_subcommand(1);

    // synth
    std::string synth_kind = "vocab";
    std::string synth_out;
    std::uint64_t synth_seed = 1;
    auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic toy-language corpus");
    synth_cmd->add_option("--kind", synth_kind, "vocab|overfit|privacy|toy-py|toy-c")->required();
    synth_cmd->add_option("--out", synth_out, "Output directory")->required();
    synth_cmd->add_option("--seed", synth_seed);

    // ingest
    std::vector<std::string> ingest_roots;
    std::string ingest_out;
    auto* ingest_cmd = app.add_subcommand("ingest", "Index source files under one or more roots");
    ingest_cmd->add_option("roots", ingest_roots, "Corpus roots")->required();
    ingest_cmd->add_option("--out", ingest_out, "Index file")->required();

    // split
    std::string split_index;
    std::string split_out;
    std::uint64_t split_seed = 1;
    auto* split_cmd = app.add_subcommand("split", "Split an index into train/validation/test");
    split_cmd->add_option("--index", split_index)->required();
    split_cmd->add_option("--out", split_out)->required();
    split_cmd->add_option("--seed", split_seed);

    // lex
    std::string lex_file;
    std::string lex_lang;
    std::string lex_vocab;
    bool lex_render = false;
    auto* lex_cmd = app.add_subcommand("lex", "Lex one file and print its tokens");
    lex_cmd->add_option("file", lex_file)->required();
    lex_cmd->add_option("--lang", lex_lang, "toy-py|toy-c (default: from extension)");
    lex_cmd->add_option("--vocab", lex_vocab, "Normalize with the kept literals of this vocabulary");
    lex_cmd->add_flag("--render", lex_render, "Print the canonical rendering instead of tokens");

    // train-vocab
    std::string tv_manifest;
    std::string tv_out;
    std::string tv_literals_out;
    std::string tv_scheme = "bpe";
    std::size_t tv_size = 2000;
    std::size_t tv_strings = 20;
    std::size_t tv_numbers = 5;
    auto* tv_cmd = app.add_subcommand("train-vocab", "Learn a subtoken vocabulary on the train split");
    tv_cmd->add_option("--manifest", tv_manifest)->required();
    tv_cmd->add_option("--out", tv_out)->required();
    tv_cmd->add_option("--literals-out", tv_literals_out);
    tv_cmd->add_option("--scheme", tv_scheme, "bpe|casing");
    tv_cmd->add_option("--size", tv_size);
    tv_cmd->add_option("--kept-strings", tv_strings);
    tv_cmd->add_option("--kept-numbers", tv_numbers);

    // train-ngram
    std::string tn_manifest;
    std::string tn_vocab;
    std::string tn_out;
    std::size_t tn_n = 5;
    auto* tn_cmd = app.add_subcommand("train-ngram", "Count an n-gram model on the train split");
    tn_cmd->add_option("--manifest", tn_manifest)->required();
    tn_cmd->add_option("--vocab", tn_vocab)->required();
    tn_cmd->add_option("--out", tn_out)->required();
    tn_cmd->add_option("-n,--order", tn_n);

    // train-gptc
    std::string tg_manifest;
    std::string tg_vocab;
    std::string tg_out;
    std::uint64_t tg_init_seed = 1;
    ModelFlags tg_model;
    ScheduleFlags tg_sched;
    auto* tg_cmd = app.add_subcommand("train-gptc", "Train a transformer on the train split");
    tg_cmd->add_option("--manifest", tg_manifest)->required();
    tg_cmd->add_option("--vocab", tg_vocab)->required();
    tg_cmd->add_option("--out", tg_out)->required();
    tg_cmd->add_option("--layers", tg_model.layers);
    tg_cmd->add_option("--d-model", tg_model.d_model);
    tg_cmd->add_option("--heads", tg_model.heads);
    tg_cmd->add_option("--n-ctx", tg_model.n_ctx);
    tg_cmd->add_option("--keep-prob", tg_model.keep_prob);
    tg_cmd->add_option("--lang-mode", tg_model.lang_mode, "none|embedding|control_codes|double_heads");
    tg_cmd->add_option("--lambda", tg_model.lambda);
    tg_cmd->add_option("--init-seed", tg_init_seed);
    add_schedule_flags(tg_cmd, tg_sched);

    // distill
    std::string ds_teacher;
    std::string ds_manifest;
    std::string ds_vocab;
    std::string ds_out;
    std::size_t ds_layers = 2;
    bool ds_soft = false;
    ScheduleFlags ds_sched;
    auto* ds_cmd = app.add_subcommand("distill", "Initialize a shallower student from a teacher and train it");
    ds_cmd->add_option("--teacher", ds_teacher)->required();
    ds_cmd->add_option("--manifest", ds_manifest)->required();
    ds_cmd->add_option("--vocab", ds_vocab)->required();
    ds_cmd->add_option("--out", ds_out)->required();
    ds_cmd->add_option("--layers", ds_layers);
    ds_cmd->add_flag("--soft-targets", ds_soft, "Also match the teacher's softened distribution");
    add_schedule_flags(ds_cmd, ds_sched);

    // eval
    std::string ev_manifest;
    std::string ev_vocab;
    std::string ev_checkpoint;
    std::string ev_ngram;
    std::string ev_smoothing = "backoff";
    std::string ev_split = "test";
    std::string ev_out;
    std::string ev_mode = "cached";
    evalkit::EvalConfig ev_config;
    auto* ev_cmd = app.add_subcommand("eval", "Score a model on held-out line completions");
    ev_cmd->add_option("--manifest", ev_manifest)->required();
    ev_cmd->add_option("--vocab", ev_vocab)->required();
    auto* ev_ck = ev_cmd->add_option("--checkpoint", ev_checkpoint);
    auto* ev_ng = ev_cmd->add_option("--ngram", ev_ngram);
    ev_ck->excludes(ev_ng);
    ev_cmd->add_option("--smoothing", ev_smoothing, "strict|backoff");
    ev_cmd->add_option("--split", ev_split);
    ev_cmd->add_option("--out", ev_out, "JSON record file");
    ev_cmd->add_option("--beam", ev_config.beam_width);
    ev_cmd->add_option("--max-len", ev_config.max_len);
    ev_cmd->add_option("--alpha", ev_config.alpha);
    ev_cmd->add_option("--kappa", ev_config.kappa);
    ev_cmd->add_option("--seed", ev_config.seed);
    ev_cmd->add_option("--mode", ev_mode);
    ev_cmd->add_option("--max-samples", ev_config.max_samples);

    // complete
    std::string cp_checkpoint;
    std::string cp_vocab;
    std::string cp_lang = "toy-py";
    bool cp_json = false;
    service::CompletionRequest cp_request;
    auto* cp_cmd = app.add_subcommand("complete", "Complete the code read from stdin");
    cp_cmd->add_option("--checkpoint", cp_checkpoint)->required();
    cp_cmd->add_option("--vocab", cp_vocab)->required();
    cp_cmd->add_option("--lang", cp_lang);
    cp_cmd->add_option("--beam", cp_request.beam_width);
    cp_cmd->add_option("--max-len", cp_request.max_len);
    cp_cmd->add_option("--alpha", cp_request.alpha);
    cp_cmd->add_option("--kappa", cp_request.kappa);
    cp_cmd->add_flag("--json", cp_json, "Print the full wire response");

    // serve
    std::string sv_checkpoint;
    std::string sv_vocab;
    std::string sv_host = "127.0.0.1";
    int sv_port = 8080;
    service::ServiceOptions sv_options;
    auto* sv_cmd = app.add_subcommand("serve", "Serve /v1/completions and /v1/health");
    sv_cmd->add_option("--checkpoint", sv_checkpoint)->required();
    sv_cmd->add_option("--vocab", sv_vocab)->required();
    sv_cmd->add_option("--host", sv_host);
    sv_cmd->add_option("--port", sv_port);
    sv_cmd->add_option("--max-in-flight", sv_options.max_in_flight);

    // bench
    std::string bn_checkpoint;
    std::string bn_vocab;
    std::size_t bn_vocab_size = 64;
    std::uint64_t bn_seed = 1;
    auto* bn_cmd = app.add_subcommand("bench", "Compare decoder modes and print call statistics");
    bn_cmd->add_option("--checkpoint", bn_checkpoint, "Use a trained model instead of a random table model");
    bn_cmd->add_option("--vocab", bn_vocab);
    bn_cmd->add_option("--table-vocab-size", bn_vocab_size);
    bn_cmd->add_option("--seed", bn_seed);

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        const CLI::App* failing = &app;
        std::vector<std::string> unknown = app.remaining();
        for (const auto* sub : app.get_subcommands()) {
            failing = sub;
            for (const auto& r : sub->remaining()) unknown.push_back(r);
        }
        if (!unknown.empty()) {
            std::cerr << "error: unknown argument";
            for (const auto& u : unknown) std::cerr << ' ' << u;
            std::cerr << '\n';
        } else {
            std::cerr << "error: " << e.what() << '\n';
        }
        std::cerr << failing->help();
        return e.get_exit_code() != 0 ? e.get_exit_code() : 2;
    }

    try {
        if (*synth_cmd) {
            std::vector<synth::SynthFile> files;
            if (synth_kind == "vocab") {
                files = synth::vocabulary_corpus(synth_seed);
            } else if (synth_kind == "overfit") {
                files = synth::overfit_corpus(synth_seed);
            } else if (synth_kind == "privacy") {
                files = synth::privacy_corpus(synth_seed);
            } else if (is_registered_language(synth_kind)) {
                synth::SynthOptions o;
                o.language = parse_language(synth_kind);
                o.seed = synth_seed;
                files = synth::generate(o);
            } else {
                throw Error("unknown corpus kind '" + synth_kind + "'");
            }
            synth::write_tree(synth_out, files);
            std::cout << files.size() << " files written to " << synth_out << '\n';
        } else if (*ingest_cmd) {
            std::vector<fs::path> roots;
            for (const auto& r : ingest_roots) {
                roots.push_back(fs::absolute(r));
            }
            const auto index = corpus::ingest(roots, corpus::default_language_config());
            auto out = open_out(ingest_out);
            corpus::write_index(out, index);
            std::cout << index.entries.size() << " unique files\n";
        } else if (*split_cmd) {
            auto in = open_in(split_index);
            const auto index = corpus::read_index(in);
            const auto m = corpus::split(index, split_seed);
            for (const auto& w : m.warnings) {
                std::cerr << "warning: " << w << '\n';
            }
            auto out = open_out(split_out);
            corpus::write_manifest(out, m);
            std::cout << "train=" << m.train.size() << " validation=" << m.validation.size()
                      << " test=" << m.test.size() << '\n';
        } else if (*lex_cmd) {
            const auto config = corpus::default_language_config();
            Language lang = Language::toy_py;
            if (!lex_lang.empty()) {
                lang = parse_language(lex_lang);
            } else if (const auto it = config.find(fs::path(lex_file).extension().string()); it != config.end()) {
                lang = it->second;
            }
            auto stream = lexnorm::lex(corpus::read_file(lex_file), lang);
            for (const auto& d : stream.diagnostics) {
                std::cerr << lex_file << ':' << d.line << ':' << d.column << ": " << d.message << '\n';
            }
            if (!lex_vocab.empty()) {
                stream = lexnorm::normalize(stream, pipeline::kept_table(load_vocab(lex_vocab)));
            }
            if (lex_render) {
                std::cout << lexnorm::render(stream);
            } else {
                for (const auto& t : stream.tokens) {
                    std::cout << t.line << ':' << t.column << '\t' << lexnorm::to_string(t.kind) << '\t'
                              << escape_field(t.text) << '\n';
                }
            }
        } else if (*tv_cmd) {
            const auto m = load_manifest(tv_manifest);
            const auto lexed = pipeline::lex_entries(m.train);
            for (const auto& w : lexed.warnings) {
                std::cerr << "warning: " << w << '\n';
            }
            const auto table = lexnorm::build_literal_table(lexed.streams, {tv_strings, tv_numbers});
            const auto docs = pipeline::normalize_all(lexed, table);
            const auto streams = pipeline::streams_of(docs);
            vocab::TrainOptions options;
            options.target_size = tv_size;
            options.kept_images = table.kept_images();
            const auto v = tv_scheme == "casing" ? vocab::train_casing(streams, options)
                                                 : vocab::train_bpe(streams, options);
            auto out = open_out(tv_out);
            vocab::write_vocabulary(out, v);
            if (!tv_literals_out.empty()) {
                auto lit = open_out(tv_literals_out);
                lexnorm::write_literal_table(lit, table);
            }
            std::cout << "vocabulary size " << v.size() << '\n';
        } else if (*tn_cmd) {
            const auto v = load_vocab(tn_vocab);
            const auto docs = load_documents(load_manifest(tn_manifest), "train", pipeline::kept_table(v));
            const auto seqs = pipeline::encode_documents(docs, v);
            const auto model = ngram::train_ngram(seqs, tn_n, v.size());
            auto out = open_out(tn_out);
            ngram::write_ngram(out, model);
            std::cout << tn_n << "-gram over " << seqs.size() << " files\n";
        } else if (*tg_cmd) {
            const auto v = load_vocab(tg_vocab);
            const auto docs = load_documents(load_manifest(tg_manifest), "train", pipeline::kept_table(v));
            model::ModelConfig c;
            c.n_layers = tg_model.layers;
            c.d_model = tg_model.d_model;
            c.d_x = tg_model.d_model;
            c.n_heads = tg_model.heads;
            c.n_ctx = tg_model.n_ctx;
            c.vocab_size = v.size();
            c.keep_prob = tg_model.keep_prob;
            c.lang_mode = model::parse_lang_mode(tg_model.lang_mode);
            c.lambda = tg_model.lambda;
            c.validate();
            auto params = model::init_params<float>(c, tg_init_seed);
            const auto samples = pipeline::make_samples(docs, v, c.lang_mode, c.n_ctx);
            const auto r = model::train(params, samples, to_schedule(tg_sched), [](std::size_t step, double loss, double lr) {
                if (step % 50 == 0) {
                    std::cerr << "step " << step << " loss " << loss << " lr " << lr << '\n';
                }
            });
            report_training(r);
            model::save_checkpoint(tg_out, params);
        } else if (*ds_cmd) {
            const auto v = load_vocab(ds_vocab);
            const auto teacher = model::load_checkpoint(ds_teacher);
            const auto docs = load_documents(load_manifest(ds_manifest), "train", pipeline::kept_table(v));
            auto student = model::distill_init(teacher, ds_layers);
            const auto samples =
                pipeline::make_samples(docs, v, student.config.lang_mode, student.config.n_ctx);
            auto schedule = to_schedule(ds_sched);
            if (ds_soft) {
                schedule.soft.teacher = &teacher;
            }
            report_training(model::train(student, samples, schedule));
            model::save_checkpoint(ds_out, student);
        } else if (*ev_cmd) {
            if (ev_checkpoint.empty() == ev_ngram.empty()) {
                throw Error("eval needs exactly one of --checkpoint or --ngram");
            }
            const auto v = load_vocab(ev_vocab);
            const auto docs = load_documents(load_manifest(ev_manifest), ev_split, pipeline::kept_table(v));
            ev_config.mode = decoder::parse_mode(ev_mode);
            ev_config.corpus_id = ev_manifest + ":" + ev_split;
            evalkit::EvalReport report;
            if (!ev_checkpoint.empty()) {
                const auto params = model::load_checkpoint(ev_checkpoint);
                ev_config.model_id = ev_checkpoint + "@" + to_hex(model::params_digest(params));
                ev_config.policy = {params.config.lang_mode, params.config.n_ctx};
                std::vector<std::vector<TokenId>> seqs;
                for (const auto& s : pipeline::make_samples(docs, v, params.config.lang_mode, params.config.n_ctx)) {
                    seqs.push_back(s.ids);
                }
                decoder::TransformerModel lm(params);
                report = evalkit::evaluate(lm, v, docs, seqs, ev_config);
            } else {
                auto in = open_in(ev_ngram);
                const auto ng = ngram::read_ngram(in);
                const auto smoothing = ev_smoothing == "strict" ? ngram::Smoothing::strict : ngram::Smoothing::backoff;
                ev_config.model_id = ev_ngram + ":" + ev_smoothing;
                const auto seqs = pipeline::encode_documents(docs, v);
                decoder::NGramAdaptor lm(ng, smoothing);
                report = evalkit::evaluate(lm, v, docs, seqs, ev_config);
            }
            std::cout << report.to_key_values();
            std::cout << std::fixed << std::setprecision(2) << "\n"
                      << std::left << std::setw(12) << "PPL" << std::setw(16) << "ROUGE-L P" << std::setw(16)
                      << "ROUGE-L R" << std::setw(16) << "Edit sim (%)" << "Syntax valid (%)\n"
                      << std::setw(12) << report.perplexity.value << std::setw(16) << report.rouge_precision
                      << std::setw(16) << report.rouge_recall << std::setw(16) << report.edit_similarity_pct
                      << report.syntax_valid_pct << '\n';
            if (!ev_out.empty()) {
                auto out = open_out(ev_out);
                out << report.to_json().dump(2) << '\n';
            }
        } else if (*cp_cmd) {
            service::CompletionService svc(model::load_checkpoint(cp_checkpoint), load_vocab(cp_vocab));
            cp_request.context.assign(std::istreambuf_iterator<char>(std::cin), std::istreambuf_iterator<char>());
            cp_request.language = parse_language(cp_lang);
            const auto resp = svc.complete(cp_request);
            if (cp_json) {
                std::cout << service::to_json(resp).dump(2) << '\n';
            } else {
                std::cout << "ghost\t" << resp.ghost_text << '\n';
                for (const auto& s : resp.suggestions) {
                    std::cout << std::setprecision(4) << s.score << '\t' << s.display_text << '\n';
                }
            }
        } else if (*sv_cmd) {
            service::CompletionService svc(model::load_checkpoint(sv_checkpoint), load_vocab(sv_vocab),
                                           sv_options);
            service::HttpServer server(svc);
            const int port = server.bind(sv_host, sv_port);
            std::cout << "listening on http://" << sv_host << ':' << port << " model " << svc.model_digest()
                      << std::endl;
            server.listen();
        } else if (*bn_cmd) {
            std::unique_ptr<decoder::DecoderModel> lm;
            std::optional<model::ModelParams<float>> params;
            std::vector<TokenId> context = {0, 1, 2};
            if (!bn_checkpoint.empty()) {
                params = model::load_checkpoint(bn_checkpoint);
                lm = std::make_unique<decoder::TransformerModel>(*params);
                if (!bn_vocab.empty()) {
                    context = {load_vocab(bn_vocab).bof()};
                }
            } else {
                lm = std::make_unique<decoder::TableModel>(bn_vocab_size, bn_seed, 2);
            }
            std::vector<std::pair<std::pair<std::size_t, std::size_t>, decoder::ModeReport>> rows;
            bool ok = true;
            for (const auto& [L, k] : {std::pair<std::size_t, std::size_t>{10, 1}, {10, 10}, {25, 15}}) {
                decoder::DecodeRequest req;
                req.context_ids = context;
                req.beam_width = k;
                req.max_len = L;
                rows.emplace_back(std::pair{L, k}, decoder::mode_equivalence_check(*lm, req));
                ok = ok && rows.back().second.equivalent;
            }
            print_call_table(std::cout, rows);
            return ok ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

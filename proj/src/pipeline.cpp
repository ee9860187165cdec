#include "ess/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <mutex>
#include <ostream>
#include <thread>

namespace ess::pipeline {

AnalysisEngine::AnalysisEngine(const kb::KnowledgePackage& pkg,
                               const analytics::AnalyzerRegistry& registry)
    : pkg_(pkg), registry_(registry) {
    for (const auto& var : pkg_.variables) {
        variables_[var.name] = var;
    }
    for (auto& def : pkg_.enpis) {
        if (!def.expression) {
            def.expression = ruledsl::parse_enpi(def.expression_source);
        }
    }
    rule_base_ = fuzzy::compile(pkg_.rules, variables_);
}

explain::EvaluationTrace AnalysisEngine::evaluate(const analytics::WindowSnapshot& snapshot) const {
    std::vector<std::pair<const kb::EnPIDefinition*, analytics::EnPIEvaluation>> enpis;
    std::map<std::string, double> inputs;
    std::set<std::string> missing;

    for (const auto& def : pkg_.enpis) {
        analytics::EnPIEvaluation evaluation =
            analytics::evaluate_enpi(*def.expression, snapshot, registry_);
        const bool feeds_rules =
            std::find(rule_base_.required_inputs.begin(), rule_base_.required_inputs.end(),
                      def.name) != rule_base_.required_inputs.end();
        if (feeds_rules) {
            if (evaluation.value) {
                inputs[def.name] = *evaluation.value;
            } else {
                missing.insert(def.name);
            }
        }
        enpis.emplace_back(&def, std::move(evaluation));
    }
    // antecedent variables no EnPI computes: flagged at validation, disabled here
    for (const auto& required : rule_base_.required_inputs) {
        if (!inputs.count(required)) {
            missing.insert(required);
        }
    }

    const fuzzy::InferenceResult inference =
        fuzzy::infer(rule_base_, variables_, inputs, missing, pkg_.engine);
    return explain::build_trace(snapshot, enpis, inference, rule_base_,
                                pkg_.reporting_threshold);
}

explain::Report AnalysisEngine::make_report() const {
    explain::Report report;
    report.machine_id = pkg_.machine.id;
    report.package_path = pkg_.root_path;
    report.content_hash = pkg_.content_hash;
    report.window = pkg_.window;
    report.engine = pkg_.engine;
    report.reporting_threshold = pkg_.reporting_threshold;
    return report;
}

explain::Report analyze_batch(const kb::KnowledgePackage& pkg,
                              const std::map<std::string, analytics::TimeSeries>& series,
                              const analytics::AnalyzerRegistry& registry) {
    AnalysisEngine engine(pkg, registry);

    std::vector<std::string> data_points;
    for (const auto& dp : pkg.data_points) {
        data_points.push_back(dp.id);
    }
    procio::WindowAssembler assembler(pkg.window, data_points);
    for (const auto& [dp, ts] : series) {
        for (const auto& sample : ts.samples) {
            assembler.push(dp, sample);
        }
    }
    for (const auto& dp : data_points) {
        assembler.finish(dp);
    }

    explain::Report report = engine.make_report();
    for (const auto& snapshot : assembler.drain_ready()) {
        report.windows.push_back(engine.evaluate(snapshot));
    }
    return report;
}

// ---------------------------------------------------------------------------
// Monitor
// ---------------------------------------------------------------------------

namespace {

// Single-consumer sample queue. The consumer polls on a short tick (it has
// to wake for grace checks regardless), so no condition variable is needed.
struct SampleQueue {
    std::mutex mutex;
    std::deque<procio::SampleEnvelope> items;
    size_t finished_producers = 0;

    void push(const procio::SampleEnvelope& envelope) {
        std::lock_guard lock(mutex);
        items.push_back(envelope);
    }
    void mark_finished() {
        std::lock_guard lock(mutex);
        ++finished_producers;
    }
};

std::string resolve_path(const std::string& root, const std::string& path) {
    std::filesystem::path p(path);
    if (p.is_absolute() || root.empty()) {
        return path;
    }
    return (std::filesystem::path(root) / p).string();
}

}  // namespace

MonitorStats run_monitor(const kb::KnowledgePackage& pkg,
                         const analytics::AnalyzerRegistry& registry, std::ostream& out,
                         const std::atomic<bool>& stop, double duration_s) {
    AnalysisEngine engine(pkg, registry);
    MonitorStats stats;

    std::vector<std::string> bound_points;
    bool live = false;
    for (const auto& binding : pkg.connector_bindings) {
        bound_points.push_back(binding.data_point);
        if (!std::holds_alternative<procio::CsvReplay>(binding.source)) {
            live = true;
        }
    }
    procio::WindowAssembler assembler(pkg.window, bound_points);

    SampleQueue queue;
    const auto sink = [&queue](const procio::SampleEnvelope& envelope) { queue.push(envelope); };

    std::vector<std::jthread> producers;
    producers.reserve(pkg.connector_bindings.size());
    for (const auto& binding : pkg.connector_bindings) {
        producers.emplace_back([&, binding](std::stop_token st) {
            try {
                if (const auto* replay = std::get_if<procio::CsvReplay>(&binding.source)) {
                    procio::CsvReplay resolved = *replay;
                    resolved.path = resolve_path(pkg.root_path, replay->path);
                    procio::run_replay(binding.data_point, resolved, sink, st);
                } else if (const auto* mb = std::get_if<procio::ModbusSource>(&binding.source)) {
                    procio::run_modbus_poller(binding.data_point, *mb, sink, st);
                } else {
                    procio::run_simulator(binding.data_point,
                                          std::get<procio::SimulatorSource>(binding.source), sink,
                                          st);
                }
            } catch (const std::exception& e) {
                // the stream ends here; the other connectors keep running
                std::fprintf(stderr, "ERROR connector %s: %s\n", binding.data_point.c_str(),
                             e.what());
            }
            queue.mark_finished();
        });
    }

    const auto emit = [&](const std::vector<analytics::WindowSnapshot>& snapshots) {
        for (const auto& snapshot : snapshots) {
            out << explain::window_to_json_text(engine.evaluate(snapshot)) << '\n';
            out.flush();
            ++stats.windows_emitted;
        }
    };

    const int64_t grace_ms = pkg.window.length_s * 1000 / 4;
    const auto started = std::chrono::steady_clock::now();
    const auto deadline =
        duration_s > 0.0
            ? started + std::chrono::milliseconds(static_cast<int64_t>(duration_s * 1000.0))
            : std::chrono::steady_clock::time_point::max();

    const size_t producer_count = producers.size();
    for (;;) {
        std::deque<procio::SampleEnvelope> batch;
        bool all_finished = false;
        {
            std::lock_guard lock(queue.mutex);
            batch.swap(queue.items);
            all_finished = queue.finished_producers == producer_count;
        }

        for (const auto& envelope : batch) {
            assembler.push(envelope.data_point, envelope.sample);
            ++stats.samples_received;
        }
        emit(assembler.drain_ready());
        if (live) {
            emit(assembler.poll_grace(procio::now_epoch_ms(), grace_ms));
        }

        if (stop.load() || std::chrono::steady_clock::now() >= deadline) {
            break;
        }
        if (all_finished) {
            for (const auto& dp : bound_points) {
                assembler.finish(dp);
            }
            emit(assembler.drain_ready());
            break;
        }
        if (batch.empty()) {
            std::this_thread::sleep_for(std::chrono::milliseconds(20));
        }
    }

    for (auto& producer : producers) {
        producer.request_stop();
    }
    producers.clear();  // join

    // drain anything that arrived during shutdown, then flush the open window
    {
        std::lock_guard lock(queue.mutex);
        for (const auto& envelope : queue.items) {
            assembler.push(envelope.data_point, envelope.sample);
            ++stats.samples_received;
        }
        queue.items.clear();
    }
    emit(assembler.drain_ready());
    emit(assembler.flush());
    stats.dropped_late = assembler.dropped_late();
    return stats;
}

}  // namespace ess::pipeline

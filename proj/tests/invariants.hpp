#pragma once

// Event-by-event consistency checks of a simulation against its own ground
// truth. Shared by the unit tests and the acceptance suite.

#include <cmath>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "twostage/engine.hpp"

namespace invariants {

/// Runs the simulation one event at a time and returns the first violation.
inline std::optional<std::string> check_run(const twostage::Workload& w, const twostage::ClusterConfig& cfg,
                                            const twostage::PolicySpec& spec, std::uint64_t seed) {
    using namespace twostage;
    Simulator sim(w, cfg, spec, seed);
    std::map<std::pair<std::size_t, std::uint32_t>, int> finished;
    std::vector<double> last_completion(cfg.n, 0.0);
    std::vector<double> last_arrival(cfg.n, 0.0);
    std::ostringstream why;
    auto close = [](double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(b)); };

    // Busy time integrated from the event sequence, independent of the
    // engine's own accounting.
    std::vector<double> observed_busy(cfg.n, 0.0);
    std::vector<bool> was_busy(cfg.n, false);
    double before = 0.0;

    while (!sim.done()) {
        for (std::size_t j = 0; j < sim.servers().size(); ++j)
            was_busy[j] = sim.servers()[j].busy();
        before = sim.now();
        const auto c = sim.step();
        const double now = sim.now();
        for (std::size_t j = 0; j < sim.servers().size(); ++j)
            if (was_busy[j])
                observed_busy[j] += now - before;
        if (c) {
            if (c->completion < c->arrival) {
                why << "task of job " << c->job << " completed before it arrived";
                return why.str();
            }
            if (finished[std::make_pair(c->job, c->task_index)]++ != 0) {
                why << "task " << c->job << '/' << c->task_index << " completed twice";
                return why.str();
            }
            // Stage-2 servers receive tasks in transfer order, not arrival order.
            if (c->completion < last_completion[c->server] ||
                (c->stage == 1 && c->arrival < last_arrival[c->server])) {
                why << "server " << c->server << " broke FCFS order at t=" << now;
                return why.str();
            }
            last_completion[c->server] = c->completion;
            last_arrival[c->server] = c->arrival;
        }
        for (std::size_t j = 0; j < sim.servers().size(); ++j) {
            const auto& s = sim.servers()[j];
            if (!close(s.unfinished_work(now), sim.brute_force_work(j))) {
                why << "server " << j << " W=" << s.unfinished_work(now) << " but queue holds "
                    << sim.brute_force_work(j) << " at t=" << now;
                return why.str();
            }
            for (const auto& t : s.queue)
                if (t.requirement > t.size) {
                    why << "stage requirement exceeds size on server " << j;
                    return why.str();
                }
        }
        for (int stage = 1; stage <= sim.stage_count(); ++stage) {
            const auto off = sim.stage_offset(stage);
            std::optional<std::string> bad;
            std::visit(
                [&](const auto& p) {
                    using P = std::decay_t<decltype(p)>;
                    for (std::size_t j = 0; j < sim.stage_size(stage) && !bad; ++j) {
                        const auto& server = sim.servers()[off + j];
                        if constexpr (std::is_same_v<P, JoinIdleQueue>) {
                            if (server.busy() && p.bit(j))
                                bad = "idle bit set on busy server " + std::to_string(off + j);
                        } else if constexpr (std::is_same_v<P, LeastWorkLeft> || std::is_same_v<P, Card>) {
                            if (!close(p.view().work(j, now), server.unfinished_work(now)))
                                bad = "dispatcher W view diverged on server " + std::to_string(off + j);
                        }
                    }
                },
                sim.policy(stage));
            if (bad)
                return bad;
        }
    }

    std::size_t total = 0;
    for (const auto& job : w.jobs)
        total += job.task_count;
    if (finished.size() != total || sim.tasks_arrived() != total) {
        why << "expected " << total << " completions, saw " << finished.size();
        return why.str();
    }
    for (const auto& s : sim.servers())
        if (std::abs(observed_busy[s.id] * s.speed - s.work_done) > 1e-9 * std::max(1.0, s.work_done)) {
            why << "server " << s.id << " busy time x speed " << observed_busy[s.id] * s.speed
                << " != work served " << s.work_done;
            return why.str();
        }
    return std::nullopt;
}

} // namespace invariants

#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <queue>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "twostage/policies.hpp"
#include "twostage/random.hpp"
#include "twostage/workload.hpp"

namespace twostage {

enum class EventKind : std::uint8_t { task_arrival, service_completion, stage_transfer };

struct Event {
    double time = 0.0;
    std::uint64_t sequence = 0;
    EventKind kind = EventKind::task_arrival;
    std::uint32_t ref = 0; // server id or transit slot

    friend bool operator>(const Event& a, const Event& b) {
        return a.time != b.time ? a.time > b.time : a.sequence > b.sequence;
    }
};

/// A task while it is in the system.
struct TaskInstance {
    std::size_t job = 0; // ordinal in Workload::jobs
    std::uint32_t task_index = 0;
    double size = 0.0;
    double requirement = 0.0; // stage-local service requirement
    double arrival = 0.0;
    double finish = 0.0; // scheduled end of service at the current server
    int stage = 1;
    std::int32_t servers[2] = {-1, -1};
    bool transfer_pending = false;
};

struct ServerState {
    std::size_t id = 0;
    int stage = 1;
    double speed = 1.0;
    std::deque<TaskInstance> queue;
    double drain_time = 0.0; // instant the queued work runs out
    double busy_time = 0.0;
    double work_done = 0.0;
    std::uint64_t served = 0;

    [[nodiscard]] bool busy() const { return !queue.empty(); }
    [[nodiscard]] double unfinished_work(double now) const {
        return queue.empty() ? 0.0 : std::max(0.0, drain_time - now) * speed;
    }
};

/// A task leaving the system.
struct TaskCompletion {
    std::size_t job = 0;
    std::uint32_t task_index = 0;
    double arrival = 0.0;
    double completion = 0.0;
    int stage = 1;
    std::size_t server = 0;
    double size = 0.0;
};

/// Admission limit: jobs beyond `max_jobs` or arriving after `until` are not
/// offered. Admitted jobs always run to completion.
struct StopRule {
    std::size_t max_jobs = std::numeric_limits<std::size_t>::max();
    double until = std::numeric_limits<double>::infinity();
};

/// Event-driven FCFS cluster. Single-threaded and deterministic for fixed
/// (workload, config, policy, seed).
class Simulator {
public:
    Simulator(const Workload& workload, const ClusterConfig& config, const PolicySpec& spec,
              std::uint64_t seed, StopRule stop = {})
        : workload_(&workload), config_(config), spec_(spec) {
        job_limit_ = std::min(stop.max_jobs, workload.jobs.size());
        while (job_limit_ > 0 && workload.jobs[job_limit_ - 1].arrival_time > stop.until)
            --job_limit_;
        if (config.n < 1 || !(config.mu > 0.0))
            throw std::invalid_argument("Simulator: invalid cluster config");
        const int n = config.n;
        int n1 = n;
        if (spec.two_stage) {
            if (spec.kind == PolicyKind::card)
                throw std::invalid_argument("Simulator: two-stage CARD is not supported");
            n1 = spec.two_stage->n1;
            if (n1 < 1 || n1 > n - 1)
                throw std::invalid_argument("Simulator: two-stage split needs 1 <= n1 <= n-1");
            if (!(spec.two_stage->theta > 0.0))
                throw std::invalid_argument("Simulator: theta must be positive");
            theta_ = spec.two_stage->theta;
        }
        stage_offset_[0] = 0;
        stage_offset_[1] = static_cast<std::size_t>(n1);
        stage_size_[0] = static_cast<std::size_t>(n1);
        stage_size_[1] = static_cast<std::size_t>(n - n1);

        servers_.resize(n);
        for (int j = 0; j < n; ++j) {
            servers_[j].id = j;
            servers_[j].stage = j < n1 ? 1 : 2;
            servers_[j].speed = config.mu;
        }

        const Stream policy_root = Stream(seed).split(StreamLabel::policy);
        policies_.push_back(make_policy(spec, stage_size_[0], config.mu));
        streams_.push_back(policy_root.split(0));
        if (spec.two_stage) {
            policies_.push_back(make_policy(spec, stage_size_[1], config.mu));
            streams_.push_back(policy_root.split(1));
        }

        if (job_limit_ > 0)
            push(workload.jobs.front().arrival_time, EventKind::task_arrival, 0);
    }

    [[nodiscard]] bool done() const { return calendar_.empty(); }
    [[nodiscard]] double now() const { return now_; }
    [[nodiscard]] std::span<const ServerState> servers() const { return servers_; }
    [[nodiscard]] const Policy& policy(int stage) const { return policies_.at(stage - 1); }
    [[nodiscard]] int stage_count() const { return static_cast<int>(policies_.size()); }
    [[nodiscard]] std::size_t stage_offset(int stage) const { return stage_offset_[stage - 1]; }
    [[nodiscard]] std::size_t stage_size(int stage) const { return stage_size_[stage - 1]; }
    [[nodiscard]] std::uint64_t events_processed() const { return events_; }
    [[nodiscard]] std::size_t tasks_arrived() const { return arrived_; }
    [[nodiscard]] std::size_t jobs_admitted() const { return job_limit_; }
    [[nodiscard]] std::size_t tasks_completed() const { return completed_; }

    /// W_j(now) recomputed from the queue contents.
    [[nodiscard]] double brute_force_work(std::size_t server) const {
        const auto& s = servers_[server];
        double total = 0.0;
        for (std::size_t k = 0; k < s.queue.size(); ++k) {
            if (k == 0)
                total += std::max(0.0, s.queue[k].finish - now_) * s.speed;
            else
                total += s.queue[k].requirement;
        }
        return total;
    }

    /// Processes one event; returns the task that left the system, if any.
    std::optional<TaskCompletion> step() {
        const Event ev = calendar_.top();
        calendar_.pop();
        now_ = ev.time;
        ++events_;
        switch (ev.kind) {
        case EventKind::task_arrival: arrive(); return std::nullopt;
        case EventKind::service_completion: return complete(ev.ref);
        case EventKind::stage_transfer: {
            TaskInstance task = transit_[ev.ref];
            free_transit_.push_back(ev.ref);
            dispatch(std::move(task), 2);
            return std::nullopt;
        }
        }
        return std::nullopt;
    }

    template <class OnCompletion>
    void run(OnCompletion&& on_completion) {
        while (!done())
            if (auto c = step())
                on_completion(*c);
    }

private:
    void push(double time, EventKind kind, std::uint32_t ref) {
        calendar_.push(Event{time, sequence_++, kind, ref});
    }

    void arrive() {
        const auto& jobs = workload_->jobs;
        const auto& job = jobs[cursor_job_];
        const auto& spec = workload_->tasks[job.first_task + cursor_task_];
        TaskInstance task;
        task.job = cursor_job_;
        task.task_index = spec.task_index;
        task.size = spec.size;
        task.arrival = job.arrival_time;
        ++arrived_;

        if (++cursor_task_ == job.task_count) {
            cursor_task_ = 0;
            ++cursor_job_;
        }
        if (cursor_job_ < job_limit_)
            push(jobs[cursor_job_].arrival_time, EventKind::task_arrival, 0);
        dispatch(std::move(task), 1);
    }

    void dispatch(TaskInstance task, int stage) {
        task.stage = stage;
        if (stage == 1 && task.size > theta_) {
            task.requirement = theta_;
            task.transfer_pending = true;
        } else {
            task.requirement = task.size;
            task.transfer_pending = false;
        }

        auto& policy = policies_[stage - 1];
        const InformationNeed need = needs_of(policy);
        DispatchContext ctx;
        ctx.now = now_;
        ctx.rng = &streams_[stage - 1];
        if (need == InformationNeed::size)
            ctx.task_size = task.size;
        const std::size_t local = std::visit([&](auto& p) { return p.choose(ctx); }, policy);
        if (local >= stage_size_[stage - 1])
            throw std::logic_error("policy " + spec_.name() + " returned server " +
                                   std::to_string(local) + " outside stage of size " +
                                   std::to_string(stage_size_[stage - 1]));
        const std::optional<double> observed =
            need >= InformationNeed::unfinished_work ? std::optional<double>(task.requirement)
                                                     : std::nullopt;
        std::visit([&](auto& p) { p.on_assign(local, observed, now_); }, policy);

        const std::size_t global = stage_offset_[stage - 1] + local;
        auto& server = servers_[global];
        task.servers[stage - 1] = static_cast<std::int32_t>(global);
        server.drain_time = std::max(server.drain_time, now_) + task.requirement / server.speed;
        task.finish = server.drain_time;
        const bool was_idle = server.queue.empty();
        server.queue.push_back(std::move(task));
        if (was_idle)
            push(server.queue.front().finish, EventKind::service_completion,
                 static_cast<std::uint32_t>(global));
    }

    std::optional<TaskCompletion> complete(std::uint32_t server_id) {
        auto& server = servers_[server_id];
        TaskInstance task = std::move(server.queue.front());
        server.queue.pop_front();
        server.busy_time += task.requirement / server.speed;
        server.work_done += task.requirement;
        ++server.served;

        if (!server.queue.empty()) {
            push(server.queue.front().finish, EventKind::service_completion, server_id);
        } else {
            const int stage = server.stage;
            const std::size_t local = server_id - stage_offset_[stage - 1];
            std::visit([&](auto& p) { p.on_server_idle(local); }, policies_[stage - 1]);
        }

        if (task.transfer_pending) {
            std::uint32_t slot;
            if (!free_transit_.empty()) {
                slot = free_transit_.back();
                free_transit_.pop_back();
                transit_[slot] = std::move(task);
            } else {
                slot = static_cast<std::uint32_t>(transit_.size());
                transit_.push_back(std::move(task));
            }
            push(now_, EventKind::stage_transfer, slot);
            return std::nullopt;
        }
        ++completed_;
        return TaskCompletion{task.job, task.task_index, task.arrival, now_, task.stage,
                              server_id, task.size};
    }

    const Workload* workload_;
    ClusterConfig config_;
    PolicySpec spec_;
    double theta_ = std::numeric_limits<double>::infinity();

    std::vector<ServerState> servers_;
    std::vector<Policy> policies_;
    std::vector<Stream> streams_;
    std::size_t stage_offset_[2] = {0, 0};
    std::size_t stage_size_[2] = {0, 0};

    std::priority_queue<Event, std::vector<Event>, std::greater<>> calendar_;
    std::uint64_t sequence_ = 0;
    double now_ = 0.0;
    std::uint64_t events_ = 0;

    std::size_t job_limit_ = 0;
    std::size_t cursor_job_ = 0;
    std::uint32_t cursor_task_ = 0;
    std::size_t arrived_ = 0;
    std::size_t completed_ = 0;

    std::vector<TaskInstance> transit_;
    std::vector<std::uint32_t> free_transit_;
};

/// Runs a workload to completion, handing every finished task to the callback.
template <class OnCompletion>
void run(const Workload& workload, const ClusterConfig& config, const PolicySpec& spec,
         std::uint64_t seed, OnCompletion&& on_completion, StopRule stop = {}) {
    Simulator sim(workload, config, spec, seed, stop);
    sim.run(std::forward<OnCompletion>(on_completion));
}

} // namespace twostage

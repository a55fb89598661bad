#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "twostage/analysis.hpp"
#include "twostage/random.hpp"
#include "twostage/text.hpp"

namespace twostage {

enum class PolicyKind { rr, jiq, lwl, card };

/// What a policy may observe at dispatch time.
enum class InformationNeed { none, idle_bits, unfinished_work, size };

inline std::string_view to_string(PolicyKind kind) {
    switch (kind) {
    case PolicyKind::rr: return "rr";
    case PolicyKind::jiq: return "jiq";
    case PolicyKind::lwl: return "lwl";
    case PolicyKind::card: return "card";
    }
    return "?";
}

inline std::optional<PolicyKind> policy_kind_from(std::string_view name) {
    if (name == "rr") return PolicyKind::rr;
    if (name == "jiq") return PolicyKind::jiq;
    if (name == "lwl") return PolicyKind::lwl;
    if (name == "card") return PolicyKind::card;
    return std::nullopt;
}

struct DispatchContext {
    std::optional<double> task_size; // only filled for size-aware policies
    double now = 0.0;
    Stream* rng = nullptr;
};

template <class P>
concept DispatchPolicy = requires(P p, const P cp, const DispatchContext& ctx, std::size_t server,
                                  std::optional<double> requirement, double now) {
    { P::needs } -> std::convertible_to<InformationNeed>;
    { p.choose(ctx) } -> std::convertible_to<std::size_t>;
    p.on_server_idle(server);
    p.on_assign(server, requirement, now);
    { cp.size() } -> std::convertible_to<std::size_t>;
};

// ---------------------------------------------------------------------------
// Decision rules as free functions
// ---------------------------------------------------------------------------

/// 1-based round-robin target of the k-th arrival (k >= 1).
constexpr std::size_t rr_choose(std::uint64_t k, std::size_t n) { return 1 + (k - 1) % n; }

/// Uniform index among the minimizers of `work`.
inline std::size_t lwl_choose(std::span<const double> work, Stream& rng) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t first = 0;
    std::size_t ties = 0;
    for (std::size_t j = 0; j < work.size(); ++j) {
        if (work[j] < best) {
            best = work[j];
            first = j;
            ties = 1;
        } else if (work[j] == best) {
            ++ties;
        }
    }
    if (ties <= 1)
        return first;
    auto pick = rng.below(ties);
    for (std::size_t j = first; j < work.size(); ++j)
        if (work[j] == best && pick-- == 0)
            return j;
    return first;
}

/// Server holding the rank-th smallest work (1-based rank), ties ordered by a
/// uniformly random permutation.
inline std::size_t ranked_server(std::span<const double> work, std::size_t rank, Stream& rng,
                                 std::vector<double>& scratch) {
    scratch.assign(work.begin(), work.end());
    std::nth_element(scratch.begin(), scratch.begin() + (rank - 1), scratch.end());
    const double value = scratch[rank - 1];
    std::size_t ties = 0;
    for (double w : work)
        ties += (w == value);
    auto pick = ties > 1 ? rng.below(ties) : 0;
    for (std::size_t j = 0; j < work.size(); ++j)
        if (work[j] == value && pick-- == 0)
            return j;
    throw std::logic_error("ranked_server: rank value not found");
}

/// W value at the given 1-based rank.
inline double ranked_work(std::span<const double> work, std::size_t rank, std::vector<double>& scratch) {
    scratch.assign(work.begin(), work.end());
    std::nth_element(scratch.begin(), scratch.begin() + (rank - 1), scratch.end());
    return scratch[rank - 1];
}

/// 1-based rank of the server that receives a task of size s:
///   s < m_1 -> 1, s >= m_n -> n, s in [m_i, m_{i+1}) -> i if W_(i) <= c_i else i + 1.
inline std::size_t card_rank(double s, std::span<const double> work, const CardThresholds& th,
                             std::vector<double>& scratch) {
    const std::size_t n = work.size();
    const auto band = static_cast<std::size_t>(std::upper_bound(th.m.begin(), th.m.end(), s) - th.m.begin());
    if (band == 0)
        return 1;
    if (band >= n)
        return n;
    return ranked_work(work, band, scratch) <= th.c[band - 1] ? band : band + 1;
}

inline std::size_t card_choose(double s, std::span<const double> work, const CardThresholds& th,
                               Stream& rng) {
    std::vector<double> scratch;
    return ranked_server(work, card_rank(s, work, th, scratch), rng, scratch);
}

// ---------------------------------------------------------------------------
// Dispatcher-side view of unfinished work
// ---------------------------------------------------------------------------

/// Tracks W_j(t) from assignment history alone: each server drains at
/// `speed` size-units per second and never idles while work remains.
class WorkView {
public:
    WorkView(std::size_t servers, double speed) : drain_time_(servers, 0.0), speed_(speed) {}

    void assign(std::size_t server, double requirement, double now) {
        drain_time_[server] = std::max(drain_time_[server], now) + requirement / speed_;
    }
    [[nodiscard]] double work(std::size_t server, double now) const {
        return std::max(0.0, drain_time_[server] - now) * speed_;
    }
    void snapshot(double now, std::vector<double>& out) const {
        out.resize(drain_time_.size());
        for (std::size_t j = 0; j < drain_time_.size(); ++j)
            out[j] = work(j, now);
    }
    [[nodiscard]] std::size_t size() const { return drain_time_.size(); }

private:
    std::vector<double> drain_time_;
    double speed_;
};

// ---------------------------------------------------------------------------
// Policies
// ---------------------------------------------------------------------------

class RoundRobin {
public:
    static constexpr InformationNeed needs = InformationNeed::none;

    explicit RoundRobin(std::size_t servers) : servers_(servers) {}

    std::size_t choose(const DispatchContext&) { return rr_choose(++arrivals_, servers_) - 1; }
    void on_server_idle(std::size_t) {}
    void on_assign(std::size_t, std::optional<double>, double) {}
    [[nodiscard]] std::size_t size() const { return servers_; }

private:
    std::size_t servers_;
    std::uint64_t arrivals_ = 0;
};

/// Join-Idle-Queue with a zero-latency idle table. All bits start set.
class JoinIdleQueue {
public:
    static constexpr InformationNeed needs = InformationNeed::idle_bits;

    explicit JoinIdleQueue(std::size_t servers) : position_(servers) {
        idle_.reserve(servers);
        for (std::size_t j = 0; j < servers; ++j) {
            position_[j] = static_cast<std::int64_t>(j);
            idle_.push_back(j);
        }
    }

    std::size_t choose(const DispatchContext& ctx) {
        if (idle_.empty())
            return ctx.rng->below(position_.size());
        const auto k = ctx.rng->below(idle_.size());
        const std::size_t server = idle_[k];
        clear(server);
        return server;
    }
    void on_server_idle(std::size_t server) {
        if (position_[server] < 0) {
            position_[server] = static_cast<std::int64_t>(idle_.size());
            idle_.push_back(server);
        }
    }
    void on_assign(std::size_t server, std::optional<double>, double) {
        if (position_[server] >= 0)
            clear(server);
    }
    [[nodiscard]] std::size_t size() const { return position_.size(); }
    [[nodiscard]] bool bit(std::size_t server) const { return position_[server] >= 0; }
    [[nodiscard]] std::vector<bool> bits() const {
        std::vector<bool> out(position_.size());
        for (std::size_t j = 0; j < out.size(); ++j)
            out[j] = bit(j);
        return out;
    }
    void set_bits(const std::vector<bool>& bits) {
        idle_.clear();
        for (std::size_t j = 0; j < bits.size(); ++j) {
            position_[j] = bits[j] ? static_cast<std::int64_t>(idle_.size()) : -1;
            if (bits[j])
                idle_.push_back(j);
        }
    }

private:
    void clear(std::size_t server) {
        const auto k = static_cast<std::size_t>(position_[server]);
        const std::size_t last = idle_.back();
        idle_[k] = last;
        position_[last] = static_cast<std::int64_t>(k);
        idle_.pop_back();
        position_[server] = -1;
    }

    std::vector<std::size_t> idle_;
    std::vector<std::int64_t> position_;
};

class LeastWorkLeft {
public:
    static constexpr InformationNeed needs = InformationNeed::unfinished_work;

    LeastWorkLeft(std::size_t servers, double speed) : view_(servers, speed) {}

    std::size_t choose(const DispatchContext& ctx) {
        view_.snapshot(ctx.now, scratch_);
        return lwl_choose(scratch_, *ctx.rng);
    }
    void on_server_idle(std::size_t) {}
    void on_assign(std::size_t server, std::optional<double> requirement, double now) {
        view_.assign(server, requirement.value(), now);
    }
    [[nodiscard]] std::size_t size() const { return view_.size(); }
    [[nodiscard]] const WorkView& view() const { return view_; }

private:
    WorkView view_;
    std::vector<double> scratch_;
};

/// Multi-band flexible CARD.
class Card {
public:
    static constexpr InformationNeed needs = InformationNeed::size;

    Card(std::size_t servers, double speed, CardThresholds thresholds)
        : view_(servers, speed), thresholds_(std::move(thresholds)) {
        if (servers > 1 && thresholds_.m.size() != servers)
            throw std::invalid_argument("Card: thresholds computed for a different server count");
    }

    std::size_t choose(const DispatchContext& ctx) {
        if (view_.size() == 1)
            return 0;
        view_.snapshot(ctx.now, work_);
        const auto rank = card_rank(ctx.task_size.value(), work_, thresholds_, scratch_);
        return ranked_server(work_, rank, *ctx.rng, scratch_);
    }
    void on_server_idle(std::size_t) {}
    void on_assign(std::size_t server, std::optional<double> requirement, double now) {
        view_.assign(server, requirement.value(), now);
    }
    [[nodiscard]] std::size_t size() const { return view_.size(); }
    [[nodiscard]] const WorkView& view() const { return view_; }
    [[nodiscard]] const CardThresholds& thresholds() const { return thresholds_; }

private:
    WorkView view_;
    CardThresholds thresholds_;
    std::vector<double> work_;
    std::vector<double> scratch_;
};

static_assert(DispatchPolicy<RoundRobin>);
static_assert(DispatchPolicy<JoinIdleQueue>);
static_assert(DispatchPolicy<LeastWorkLeft>);
static_assert(DispatchPolicy<Card>);

using Policy = std::variant<RoundRobin, JoinIdleQueue, LeastWorkLeft, Card>;

inline InformationNeed needs_of(const Policy& p) {
    return std::visit([](const auto& q) { return std::decay_t<decltype(q)>::needs; }, p);
}

// ---------------------------------------------------------------------------
// Policy specification
// ---------------------------------------------------------------------------

/// Stage split of a two-stage cluster. Stage 1 gets servers [0, n1).
struct TwoStageSplit {
    int n1 = 1;
    double theta = std::numeric_limits<double>::infinity();
};

/// Fully resolved dispatch configuration for one run.
struct PolicySpec {
    PolicyKind kind = PolicyKind::rr;
    std::optional<TwoStageSplit> two_stage;
    std::optional<CardThresholds> card; // required when kind == card

    [[nodiscard]] std::string name() const {
        std::string out(to_string(kind));
        return two_stage ? "two_stage:" + out : out;
    }
};

/// Policy name as written in configs and on the command line:
///   rr | jiq | lwl | card | two_stage:<inner>[,n1=<int>][,theta=<size>|,theta_q=<quantile>]
struct PolicyName {
    PolicyKind kind = PolicyKind::rr;
    bool two_stage = false;
    std::optional<int> n1;
    std::optional<double> theta;
    std::optional<double> theta_quantile;

    [[nodiscard]] std::string label() const {
        std::string out(to_string(kind));
        return two_stage ? "two_stage:" + out : out;
    }
};

inline PolicyName parse_policy_name(std::string_view text_in) {
    const auto text = text::trim(text_in);
    PolicyName out;
    constexpr std::string_view prefix = "two_stage:";
    if (text.substr(0, prefix.size()) != prefix) {
        auto kind = policy_kind_from(text);
        if (!kind)
            throw std::invalid_argument("unknown policy '" + std::string(text) + "'");
        out.kind = *kind;
        return out;
    }
    out.two_stage = true;
    auto parts = text::split(text.substr(prefix.size()), ',');
    auto kind = policy_kind_from(text::trim(parts[0]));
    if (!kind)
        throw std::invalid_argument("unknown inner policy '" + std::string(parts[0]) + "'");
    if (*kind == PolicyKind::card)
        throw std::invalid_argument("two-stage CARD is not supported");
    out.kind = *kind;
    for (std::size_t i = 1; i < parts.size(); ++i) {
        const auto part = text::trim(parts[i]);
        const auto eq = part.find('=');
        if (eq == std::string_view::npos)
            throw std::invalid_argument("malformed two-stage option '" + std::string(part) + "'");
        const auto key = part.substr(0, eq);
        const auto value = part.substr(eq + 1);
        if (key == "n1") {
            out.n1 = text::parse_int<int>(value);
            if (!out.n1)
                throw std::invalid_argument("malformed n1");
        } else if (key == "theta") {
            out.theta = text::parse_double(value);
            if (!out.theta)
                throw std::invalid_argument("malformed theta");
        } else if (key == "theta_q") {
            out.theta_quantile = text::parse_double(value);
            if (!out.theta_quantile)
                throw std::invalid_argument("malformed theta_q");
        } else {
            throw std::invalid_argument("unknown two-stage option '" + std::string(key) + "'");
        }
    }
    return out;
}

/// Builds the per-stage policy objects for a spec.
inline Policy make_policy(const PolicySpec& spec, std::size_t servers, double speed) {
    switch (spec.kind) {
    case PolicyKind::rr: return RoundRobin(servers);
    case PolicyKind::jiq: return JoinIdleQueue(servers);
    case PolicyKind::lwl: return LeastWorkLeft(servers, speed);
    case PolicyKind::card:
        if (!spec.card)
            throw std::invalid_argument("CARD policy requires thresholds");
        return Card(servers, speed, *spec.card);
    }
    throw std::logic_error("make_policy: unknown kind");
}

} // namespace twostage

#pragma once

// Minimal reactive-streams substrate: lazy observables, multicasting subjects,
// cancellable subscriptions and the handful of operators the inference engine
// is assembled from.
//
// Delivery model: operators (map, combine_latest, ...) forward values
// synchronously; subjects hand every emission to a FIFO Scheduler.  A value
// pushed while the scheduler is already draining is queued behind the current
// work instead of being processed recursively, so feedback loops run
// breadth-first to quiescence with bounded stack depth.

#include <cstddef>
#include <deque>
#include <exception>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

namespace rmp::rx {

/// Raised when a scheduler exceeds its per-drain event budget.
class DrainLimitExceeded : public std::runtime_error {
public:
    explicit DrainLimitExceeded(std::size_t limit)
        : std::runtime_error("reactive scheduler exceeded its drain budget of " +
                             std::to_string(limit) + " events"),
          limit_(limit) {}
    std::size_t limit() const noexcept { return limit_; }

private:
    std::size_t limit_;
};

/// FIFO trampoline.  schedule() runs the task immediately when idle, otherwise
/// appends it to the queue that the outer drain loop is working through.
class Scheduler {
public:
    static constexpr std::size_t kDefaultMaxEvents = 1'000'000;

    explicit Scheduler(std::size_t max_events = kDefaultMaxEvents) : max_events_(max_events) {}

    Scheduler(const Scheduler&) = delete;
    Scheduler& operator=(const Scheduler&) = delete;

    void schedule(std::function<void()> task) {
        queue_.push_back(std::move(task));
        if (!draining_) drain();
    }

    bool draining() const noexcept { return draining_; }
    std::size_t max_events() const noexcept { return max_events_; }
    void set_max_events(std::size_t n) noexcept { max_events_ = n; }
    /// Number of tasks executed by the most recent drain.
    std::size_t last_drain_events() const noexcept { return last_drain_events_; }

private:
    void drain() {
        draining_ = true;
        std::size_t processed = 0;
        try {
            while (!queue_.empty()) {
                if (++processed > max_events_) {
                    queue_.clear();
                    throw DrainLimitExceeded(max_events_);
                }
                auto task = std::move(queue_.front());
                queue_.pop_front();
                task();
            }
        } catch (...) {
            queue_.clear();
            draining_ = false;
            last_drain_events_ = processed;
            throw;
        }
        draining_ = false;
        last_drain_events_ = processed;
    }

    std::deque<std::function<void()>> queue_;
    bool draining_ = false;
    std::size_t max_events_;
    std::size_t last_drain_events_ = 0;
};

using SchedulerPtr = std::shared_ptr<Scheduler>;

/// Scheduler shared by subjects that were not given one explicitly.
inline SchedulerPtr default_scheduler() {
    thread_local SchedulerPtr instance = std::make_shared<Scheduler>();
    return instance;
}

template <class T>
struct Observer {
    std::function<void(const T&)> on_next;
    std::function<void(std::exception_ptr)> on_error;
    std::function<void()> on_complete;

    void next(const T& v) const {
        if (on_next) on_next(v);
    }
    void error(std::exception_ptr e) const {
        if (on_error) on_error(std::move(e));
    }
    void complete() const {
        if (on_complete) on_complete();
    }
};

/// Handle on a running subscription.  Copies share state; cancelling any copy
/// cancels the subscription and every upstream subscription it owns.
class Subscription {
public:
    Subscription() : state_(std::make_shared<State>()) {}

    bool active() const noexcept { return state_->active; }

    void unsubscribe() {
        if (!state_->active) return;
        state_->active = false;
        auto teardown = std::move(state_->teardown);
        state_->teardown.clear();
        for (auto& fn : teardown) fn();
    }

    /// Registers cleanup run on unsubscribe (immediately if already cancelled).
    void add_teardown(std::function<void()> fn) {
        if (!state_->active) {
            fn();
            return;
        }
        state_->teardown.push_back(std::move(fn));
    }

    void add(Subscription child) {
        add_teardown([child]() mutable { child.unsubscribe(); });
    }

    static Subscription closed() {
        Subscription s;
        s.state_->active = false;
        return s;
    }

private:
    struct State {
        bool active = true;
        std::vector<std::function<void()>> teardown;
    };
    std::shared_ptr<State> state_;
};

/// Lazy push collection.  Nothing runs until subscribe() is called; every
/// subscription executes the producer independently (cold semantics).
template <class T>
class Observable {
public:
    using value_type = T;
    using Producer = std::function<Subscription(Observer<T>)>;

    Observable() = default;
    explicit Observable(Producer producer) : producer_(std::move(producer)) {}

    Subscription subscribe(Observer<T> observer) const {
        if (!producer_) {
            return Subscription::closed();
        }
        return producer_(std::move(observer));
    }

    Subscription subscribe(std::function<void(const T&)> on_next) const {
        return subscribe(Observer<T>{std::move(on_next), {}, {}});
    }

    explicit operator bool() const noexcept { return static_cast<bool>(producer_); }

private:
    Producer producer_;
};

/// Multicasting relay.  Values are delivered through the scheduler to the
/// subscriptions that were active at push time.  With `replay_latest` set, a
/// new subscriber first receives the most recent value (behaviour-subject
/// style); the default matches plain subject semantics where late subscribers
/// only see future values.
template <class T>
class Subject : public std::enable_shared_from_this<Subject<T>> {
public:
    explicit Subject(SchedulerPtr scheduler = default_scheduler(), bool replay_latest = false)
        : scheduler_(std::move(scheduler)), replay_latest_(replay_latest) {}

    static std::shared_ptr<Subject> create(SchedulerPtr scheduler = default_scheduler(),
                                           bool replay_latest = false) {
        return std::make_shared<Subject>(std::move(scheduler), replay_latest);
    }

    void next(const T& value) {
        if (done_) {
            throw std::logic_error("push into a completed subject");
        }
        latest_ = value;
        auto targets = live_entries();
        if (targets.empty()) return;
        scheduler_->schedule([targets = std::move(targets), value]() {
            for (const auto& e : targets) {
                if (e->active) e->observer.next(value);
            }
        });
    }

    void error(std::exception_ptr err) {
        if (done_) return;
        done_ = true;
        error_ = err;
        auto targets = live_entries();
        scheduler_->schedule([targets = std::move(targets), err]() {
            for (const auto& e : targets) {
                if (e->active) e->observer.error(err);
            }
        });
    }

    void complete() {
        if (done_) return;
        done_ = true;
        auto targets = live_entries();
        scheduler_->schedule([targets = std::move(targets)]() {
            for (const auto& e : targets) {
                if (e->active) e->observer.complete();
            }
        });
    }

    Subscription subscribe(Observer<T> observer) {
        if (done_ && !replay_latest_) {
            // Disposed stream: the subscription is born completed, callbacks never fire.
            return Subscription::closed();
        }
        auto entry = std::make_shared<Entry>(Entry{std::move(observer), true});
        Subscription sub;
        if (!done_) {
            entries_.push_back(entry);
            std::weak_ptr<Subject> weak = this->shared_from_this();
            sub.add_teardown([weak, entry]() {
                entry->active = false;
                if (auto self = weak.lock()) self->prune();
            });
        } else {
            sub.add_teardown([entry]() { entry->active = false; });
        }
        if (replay_latest_ && (latest_ || done_)) {
            auto latest = latest_;
            bool done = done_;
            auto err = error_;
            scheduler_->schedule([entry, latest, done, err]() {
                if (!entry->active) return;
                if (latest) entry->observer.next(*latest);
                if (done) {
                    if (err) entry->observer.error(err);
                    else entry->observer.complete();
                }
            });
        }
        return sub;
    }

    Observable<T> as_observable() {
        std::shared_ptr<Subject> self = this->shared_from_this();
        return Observable<T>([self](Observer<T> o) { return self->subscribe(std::move(o)); });
    }

    /// Observer that forwards into this subject.
    Observer<T> as_observer() {
        std::weak_ptr<Subject> weak = this->shared_from_this();
        return Observer<T>{
            [weak](const T& v) {
                if (auto s = weak.lock()) s->next(v);
            },
            [weak](std::exception_ptr e) {
                if (auto s = weak.lock()) s->error(e);
            },
            [weak]() {
                if (auto s = weak.lock()) s->complete();
            }};
    }

    const std::optional<T>& latest() const noexcept { return latest_; }
    bool completed() const noexcept { return done_; }
    std::size_t subscriber_count() const noexcept {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e->active ? 1 : 0;
        return n;
    }
    const SchedulerPtr& scheduler() const noexcept { return scheduler_; }

private:
    struct Entry {
        Observer<T> observer;
        bool active;
    };

    std::vector<std::shared_ptr<Entry>> live_entries() const {
        std::vector<std::shared_ptr<Entry>> out;
        out.reserve(entries_.size());
        for (const auto& e : entries_) {
            if (e->active) out.push_back(e);
        }
        return out;
    }

    void prune() {
        std::erase_if(entries_, [](const auto& e) { return !e->active; });
    }

    SchedulerPtr scheduler_;
    bool replay_latest_;
    std::vector<std::shared_ptr<Entry>> entries_;
    std::optional<T> latest_;
    bool done_ = false;
    std::exception_ptr error_;
};

template <class T>
using SubjectPtr = std::shared_ptr<Subject<T>>;

// ---------------------------------------------------------------------------
// Operators
// ---------------------------------------------------------------------------

template <class T>
Subscription subscribe(const Observable<T>& source, std::function<void(const T&)> actor) {
    return source.subscribe(std::move(actor));
}

/// Cold single-value stream: every subscriber receives `value` then completion.
template <class T>
Observable<T> of(T value) {
    return Observable<T>([value = std::move(value)](Observer<T> o) {
        o.next(value);
        o.complete();
        return Subscription::closed();
    });
}

/// Like of(), but the value is produced on each subscription.
template <class T>
Observable<T> defer_value(std::function<T()> make) {
    return Observable<T>([make = std::move(make)](Observer<T> o) {
        try {
            o.next(make());
            o.complete();
        } catch (...) {
            o.error(std::current_exception());
        }
        return Subscription::closed();
    });
}

template <class T>
Observable<T> never() {
    return Observable<T>([](Observer<T>) { return Subscription(); });
}

/// Applies `f` to each value.  If `f` throws, the output signals the error and
/// terminates; the source is left untouched.
template <class A, class F>
auto map(const Observable<A>& source, F f) -> Observable<std::invoke_result_t<F, const A&>> {
    using B = std::invoke_result_t<F, const A&>;
    return Observable<B>([source, f](Observer<B> down) {
        Subscription outer;
        auto stopped = std::make_shared<bool>(false);
        Observer<A> up{
            [down, f, stopped, outer](const A& a) mutable {
                if (*stopped) return;
                std::optional<B> b;
                try {
                    b.emplace(f(a));
                } catch (...) {
                    *stopped = true;
                    down.error(std::current_exception());
                    outer.unsubscribe();
                    return;
                }
                down.next(*b);
            },
            [down, stopped](std::exception_ptr e) {
                if (*stopped) return;
                *stopped = true;
                down.error(e);
            },
            [down, stopped]() {
                if (*stopped) return;
                *stopped = true;
                down.complete();
            }};
        outer.add(source.subscribe(std::move(up)));
        return outer;
    });
}

/// Gating strategy of combine_latest.
enum class CombineStrategy {
    /// Emit on every source update once all sources have emitted at least once.
    Latest,
    /// Emit only when every source has produced a value since the previous
    /// emission.  A completed source keeps contributing its final value and no
    /// longer needs to refresh.
    AllNew,
};

/// Combines the latest values of `sources` into a vector (same order).
/// Completes when all sources complete; any source error propagates.
template <class T>
Observable<std::vector<T>> combine_latest(std::vector<Observable<T>> sources,
                                          CombineStrategy strategy = CombineStrategy::Latest) {
    if (sources.empty()) {
        throw std::invalid_argument("combine_latest requires at least one source");
    }
    return Observable<std::vector<T>>([sources = std::move(sources), strategy](
                                          Observer<std::vector<T>> down) {
        struct State {
            std::vector<std::optional<T>> latest;
            std::vector<bool> fresh;
            std::vector<bool> completed;
            std::size_t have = 0;
            std::size_t done = 0;
            std::size_t stale = 0;   // live sources without a value since the last emission
            std::size_t nfresh = 0;
            bool stopped = false;
        };
        const std::size_t k = sources.size();
        auto st = std::make_shared<State>();
        st->latest.resize(k);
        st->fresh.assign(k, false);
        st->completed.assign(k, false);
        st->stale = k;
        Subscription outer;

        auto try_emit = [st, down, strategy, k]() {
            if (st->have < k) return;
            if (strategy == CombineStrategy::AllNew) {
                // Every source completed and nothing new: nothing to say.
                if (st->stale > 0 || st->nfresh == 0) return;
                std::fill(st->fresh.begin(), st->fresh.end(), false);
                st->nfresh = 0;
                st->stale = k - st->done;
            }
            std::vector<T> tuple;
            tuple.reserve(k);
            for (auto& v : st->latest) tuple.push_back(*v);
            down.next(tuple);
        };

        for (std::size_t i = 0; i < k; ++i) {
            Observer<T> up{
                [st, i, try_emit](const T& v) {
                    if (st->stopped) return;
                    if (!st->latest[i]) ++st->have;
                    st->latest[i] = v;
                    if (!st->fresh[i]) {
                        st->fresh[i] = true;
                        ++st->nfresh;
                        if (!st->completed[i]) --st->stale;
                    }
                    try_emit();
                },
                [st, down](std::exception_ptr e) {
                    if (st->stopped) return;
                    st->stopped = true;
                    down.error(e);
                },
                [st, i, down, k, try_emit]() {
                    if (st->stopped || st->completed[i]) return;
                    st->completed[i] = true;
                    ++st->done;
                    if (!st->fresh[i]) --st->stale;
                    if (st->done == k) {
                        st->stopped = true;
                        down.complete();
                    } else if (!st->latest[i]) {
                        // Completed without a value: combination can never fire.
                        st->stopped = true;
                        down.complete();
                    } else {
                        try_emit();
                    }
                }};
            outer.add(sources[i].subscribe(std::move(up)));
            if (st->stopped) break;
        }
        return outer;
    });
}

/// Sum of the latest values of the numeric sources.
template <class T>
Observable<T> sum_latest(std::vector<Observable<T>> sources,
                         CombineStrategy strategy = CombineStrategy::Latest) {
    if (sources.empty()) {
        throw std::invalid_argument("sum_latest requires at least one source");
    }
    return map(combine_latest(std::move(sources), strategy), [](const std::vector<T>& xs) {
        return std::accumulate(xs.begin(), xs.end(), T{});
    });
}

/// Applies `stage` to each value as a side effect and passes it through.
template <class T>
Observable<T> tap(const Observable<T>& source, std::function<void(const T&)> stage) {
    return map(source, [stage = std::move(stage)](const T& v) {
        stage(v);
        return v;
    });
}

/// Lazily connected multicast: the first subscription connects `source` into a
/// replaying subject; later subscribers share that single upstream execution
/// and start from its latest value.
template <class T>
class SharedStream {
public:
    SharedStream(Observable<T> source, SchedulerPtr scheduler)
        : state_(std::make_shared<State>()) {
        state_->source = std::move(source);
        state_->subject = Subject<T>::create(std::move(scheduler), true);
    }

    Observable<T> observable() const {
        auto st = state_;
        return Observable<T>([st](Observer<T> o) {
            auto sub = st->subject->subscribe(std::move(o));
            if (!st->connected) {
                // Connecting through the scheduler keeps long dependency chains
                // from recursing once per link.
                std::weak_ptr<State> weak = st;
                st->subject->scheduler()->schedule([weak] {
                    if (auto s = weak.lock()) connect(s);
                });
            }
            return sub;
        });
    }

    /// Pushes a value directly (e.g. an initial marginal).
    void push(const T& v) { state_->subject->next(v); }

    bool connected() const noexcept { return state_->connected; }
    bool completed() const noexcept { return state_->subject->completed(); }
    const std::optional<T>& latest() const noexcept { return state_->subject->latest(); }
    const SubjectPtr<T>& subject() const noexcept { return state_->subject; }

    void connect() const { connect(state_); }

    /// Drops the upstream subscription (the stream stays connected and inert).
    void disconnect() const { state_->upstream.unsubscribe(); }

private:
    struct State {
        Observable<T> source;
        SubjectPtr<T> subject;
        Subscription upstream;
        bool connected = false;
    };

    static void connect(const std::shared_ptr<State>& st) {
        if (st->connected) return;
        st->connected = true;
        st->upstream = st->source.subscribe(st->subject->as_observer());
    }

    std::shared_ptr<State> state_;
};

}  // namespace rmp::rx

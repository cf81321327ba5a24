#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace onca {

/// Lifetime class of a tracked allocation. Persistent buffers live across a
/// whole rollout (state grids, weights); transient buffers are per-step or
/// per-worker temporaries.
enum class AllocClass { persistent, transient };

struct PhaseAlloc {
    std::string label;
    AllocClass cls = AllocClass::persistent;
    std::size_t count = 0;        // allocations under this label
    std::size_t bytes_max = 0;    // largest single allocation
    std::size_t bytes_total = 0;  // sum over all allocations
};

/// Snapshot of one instrumented run. Float counts are bytes/4; all payloads
/// are f32 except fire masks (u8), which therefore contribute fractionally.
struct MemoryReport {
    std::size_t cells = 0;
    std::size_t peak_persistent_floats = 0;
    std::size_t peak_transient_floats = 0;
    std::size_t peak_total_floats = 0;
    std::size_t worker_scratch_floats = 0;  // constant per-worker scratch (fused path)
    std::vector<PhaseAlloc> phases;

    double persistent_per_cell() const {
        return cells ? double(peak_persistent_floats) / double(cells) : 0.0;
    }
    double total_per_cell() const {
        return cells ? double(peak_total_floats) / double(cells) : 0.0;
    }
    /// Fused engine: the per-worker scratch size; layer-wise engine: peak
    /// whole-grid transients divided by cell count.
    double transient_per_cell() const {
        if (worker_scratch_floats) return double(worker_scratch_floats);
        return cells ? double(peak_transient_floats) / double(cells) : 0.0;
    }
};

/// Process-wide allocation meter. Every CellGrid / TrackedVec reports its
/// buffer here; engines bracket measured runs with begin_session/end_session.
/// Live counters follow reality at all times; peaks and the phase log are
/// session-scoped. Sessions do not nest.
class MemoryTracker {
public:
    static MemoryTracker& instance();

    void on_alloc(std::size_t bytes, AllocClass cls, const char* label);
    void on_free(std::size_t bytes, AllocClass cls);
    void on_reclass(std::size_t bytes, AllocClass from, AllocClass to);
    void note_worker_scratch(std::size_t floats);

    void begin_session();
    MemoryReport end_session(std::size_t cells);
    bool session_active() const;

    /// Peek at the running session. invalid-state if none is active.
    MemoryReport current(std::size_t cells) const;

    std::size_t live_bytes() const;

private:
    MemoryTracker() = default;
    struct Impl;
    Impl& impl() const;
};

/// Heap buffer whose size is reported to the MemoryTracker for its entire
/// lifetime. Value-initialized (zeros).
template <typename T>
class TrackedVec {
public:
    TrackedVec() = default;
    TrackedVec(std::size_t n, AllocClass cls, const char* label)
        : v_(n), cls_(cls), label_(label) {
        if (n) MemoryTracker::instance().on_alloc(n * sizeof(T), cls_, label_);
    }
    TrackedVec(const TrackedVec& o) : v_(o.v_), cls_(o.cls_), label_(o.label_) {
        if (!v_.empty()) MemoryTracker::instance().on_alloc(v_.size() * sizeof(T), cls_, label_);
    }
    TrackedVec(TrackedVec&& o) noexcept
        : v_(std::move(o.v_)), cls_(o.cls_), label_(o.label_) {
        o.v_.clear();
        o.v_.shrink_to_fit();
    }
    TrackedVec& operator=(const TrackedVec& o) {
        if (this == &o) return *this;
        release();
        v_ = o.v_;
        cls_ = o.cls_;
        label_ = o.label_;
        if (!v_.empty()) MemoryTracker::instance().on_alloc(v_.size() * sizeof(T), cls_, label_);
        return *this;
    }
    TrackedVec& operator=(TrackedVec&& o) noexcept {
        if (this == &o) return *this;
        release();
        v_ = std::move(o.v_);
        cls_ = o.cls_;
        label_ = o.label_;
        o.v_.clear();
        o.v_.shrink_to_fit();
        return *this;
    }
    ~TrackedVec() { release(); }

    void reclass(AllocClass to) {
        if (to == cls_) return;
        if (!v_.empty())
            MemoryTracker::instance().on_reclass(v_.size() * sizeof(T), cls_, to);
        cls_ = to;
    }

    T* data() { return v_.data(); }
    const T* data() const { return v_.data(); }
    std::size_t size() const { return v_.size(); }
    bool empty() const { return v_.empty(); }
    T& operator[](std::size_t i) { return v_[i]; }
    const T& operator[](std::size_t i) const { return v_[i]; }
    auto begin() { return v_.begin(); }
    auto end() { return v_.end(); }
    auto begin() const { return v_.begin(); }
    auto end() const { return v_.end(); }

private:
    void release() {
        if (!v_.empty()) MemoryTracker::instance().on_free(v_.size() * sizeof(T), cls_);
        v_.clear();
        v_.shrink_to_fit();
    }

    std::vector<T> v_;
    AllocClass cls_ = AllocClass::persistent;
    const char* label_ = "";
};

}  // namespace onca

#include "onca/memtrack.hpp"

#include <algorithm>
#include <mutex>
#include <unordered_map>

namespace onca {

struct MemoryTracker::Impl {
    mutable std::mutex mu;
    std::size_t live_persistent = 0;
    std::size_t live_transient = 0;
    std::size_t peak_persistent = 0;
    std::size_t peak_transient = 0;
    std::size_t peak_total = 0;
    std::size_t worker_scratch_floats = 0;
    bool session = false;
    std::vector<PhaseAlloc> phases;
    std::unordered_map<std::string, std::size_t> phase_index;

    void bump_peaks() {
        peak_persistent = std::max(peak_persistent, live_persistent);
        peak_transient = std::max(peak_transient, live_transient);
        peak_total = std::max(peak_total, live_persistent + live_transient);
    }

    void log_phase(std::size_t bytes, AllocClass cls, const char* label) {
        if (!session) return;
        auto [it, inserted] = phase_index.try_emplace(label, phases.size());
        if (inserted) {
            PhaseAlloc p;
            p.label = label;
            p.cls = cls;
            phases.push_back(std::move(p));
        }
        PhaseAlloc& p = phases[it->second];
        p.count += 1;
        p.bytes_max = std::max(p.bytes_max, bytes);
        p.bytes_total += bytes;
    }

    MemoryReport build_report(std::size_t cells) const {
        MemoryReport r;
        r.cells = cells;
        r.peak_persistent_floats = peak_persistent / 4;
        r.peak_transient_floats = peak_transient / 4;
        r.peak_total_floats = peak_total / 4;
        r.worker_scratch_floats = worker_scratch_floats;
        r.phases = phases;
        return r;
    }
};

MemoryTracker::Impl& MemoryTracker::impl() const {
    static Impl imp;
    return imp;
}

MemoryTracker& MemoryTracker::instance() {
    static MemoryTracker t;
    return t;
}

void MemoryTracker::on_alloc(std::size_t bytes, AllocClass cls, const char* label) {
    Impl& im = impl();
    std::lock_guard lock(im.mu);
    (cls == AllocClass::persistent ? im.live_persistent : im.live_transient) += bytes;
    im.bump_peaks();
    im.log_phase(bytes, cls, label);
}

void MemoryTracker::on_free(std::size_t bytes, AllocClass cls) {
    Impl& im = impl();
    std::lock_guard lock(im.mu);
    std::size_t& live = (cls == AllocClass::persistent ? im.live_persistent : im.live_transient);
    live -= std::min(live, bytes);
}

void MemoryTracker::on_reclass(std::size_t bytes, AllocClass from, AllocClass to) {
    Impl& im = impl();
    std::lock_guard lock(im.mu);
    std::size_t& src = (from == AllocClass::persistent ? im.live_persistent : im.live_transient);
    std::size_t& dst = (to == AllocClass::persistent ? im.live_persistent : im.live_transient);
    src -= std::min(src, bytes);
    dst += bytes;
    im.bump_peaks();
}

void MemoryTracker::note_worker_scratch(std::size_t floats) {
    Impl& im = impl();
    std::lock_guard lock(im.mu);
    im.worker_scratch_floats = std::max(im.worker_scratch_floats, floats);
}

void MemoryTracker::begin_session() {
    Impl& im = impl();
    std::lock_guard lock(im.mu);
    im.session = true;
    im.peak_persistent = im.live_persistent;
    im.peak_transient = im.live_transient;
    im.peak_total = im.live_persistent + im.live_transient;
    im.worker_scratch_floats = 0;
    im.phases.clear();
    im.phase_index.clear();
}

MemoryReport MemoryTracker::end_session(std::size_t cells) {
    Impl& im = impl();
    std::lock_guard lock(im.mu);
    if (!im.session) throw std::logic_error("memory session: end without begin");
    im.session = false;
    return im.build_report(cells);
}

bool MemoryTracker::session_active() const {
    Impl& im = impl();
    std::lock_guard lock(im.mu);
    return im.session;
}

MemoryReport MemoryTracker::current(std::size_t cells) const {
    Impl& im = impl();
    std::lock_guard lock(im.mu);
    if (!im.session) throw std::logic_error("memory session: no active session");
    return im.build_report(cells);
}

std::size_t MemoryTracker::live_bytes() const {
    Impl& im = impl();
    std::lock_guard lock(im.mu);
    return im.live_persistent + im.live_transient;
}

}  // namespace onca

#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "nvs/rng.hpp"

namespace nvs {

struct EmaTracker {
    float value = 0.f;
    bool initialized = false;
};

// PSNR outlier test: flag iff psnr < (1 + gamma) * EMA, evaluated against the
// pre-update EMA; then EMA <- m * psnr + (1 - m) * EMA. The first observation
// initializes the tracker and never flags.
inline bool detect_crude_psnr(EmaTracker& tracker, float psnr, float gamma,
                              float momentum = 0.4f) {
    if (!tracker.initialized) {
        tracker.value = psnr;
        tracker.initialized = true;
        return false;
    }
    const bool flagged = psnr < (1.f + gamma) * tracker.value;
    tracker.value = momentum * psnr + (1.f - momentum) * tracker.value;
    return flagged;
}

// Gradient-magnitude counterpart: flag iff grad > (1 + gamma) * EMA (strict).
inline bool detect_crude_gradient(EmaTracker& tracker, float grad_norm, float gamma,
                                  float momentum = 0.4f) {
    if (!tracker.initialized) {
        tracker.value = grad_norm;
        tracker.initialized = true;
        return false;
    }
    const bool flagged = grad_norm > (1.f + gamma) * tracker.value;
    tracker.value = momentum * grad_norm + (1.f - momentum) * tracker.value;
    return flagged;
}

// Selectivity schedule: linear from gamma_start at step 0 to gamma_end at
// stage2_len, clamped afterwards.
inline float gamma_value(std::int64_t step, std::int64_t stage2_len, float gamma_start = 0.05f,
                         float gamma_end = 0.02f) {
    if (step <= 0) return gamma_start;
    if (step >= stage2_len) return gamma_end;
    const float frac = float(double(step) / double(stage2_len));
    return gamma_start + (gamma_end - gamma_start) * frac;
}

enum class FailureType : unsigned char { Quality = 0, Gradient = 1 };

struct RefinementEntry {
    int camera_id = 0;
    FailureType type = FailureType::Quality;
    float severity = 0.f;       // max deficit seen
    int hits = 0;               // consecutive detections
    std::int64_t detected_at = 0;

    float priority() const { return severity * float(hits); }
};

// One entry per camera; re-detection raises severity to the max deficit and
// bumps the hit count. Sampling is proportional to severity * hits.
struct RefinementStack {
    std::vector<RefinementEntry> entries;  // insertion order

    bool empty() const { return entries.empty(); }

    RefinementEntry* find(int camera_id) {
        for (auto& e : entries)
            if (e.camera_id == camera_id) return &e;
        return nullptr;
    }

    void update(int camera_id, FailureType type, float deficit, std::int64_t iteration) {
        if (RefinementEntry* e = find(camera_id)) {
            e->severity = std::max(e->severity, deficit);
            e->hits += 1;
            e->type = type;
            e->detected_at = iteration;
            return;
        }
        entries.push_back({camera_id, type, deficit, 1, iteration});
    }

    double total_priority() const {
        double total = 0;
        for (const auto& e : entries) total += e.priority();
        return total;
    }

    // Camera id drawn with probability proportional to priority. Zero-priority
    // stacks fall back to uniform choice.
    int sample(Rng& rng) const {
        const double total = total_priority();
        if (total <= 0) return entries[rng.uniform_index(entries.size())].camera_id;
        const double u = rng.uniform() * total;
        double acc = 0;
        for (const auto& e : entries) {
            acc += e.priority();
            if (u < acc) return e.camera_id;
        }
        return entries.back().camera_id;
    }

    // Entries ordered by descending priority (camera id breaks ties).
    std::vector<RefinementEntry> ranked() const {
        std::vector<RefinementEntry> sorted = entries;
        std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
            if (a.priority() != b.priority()) return a.priority() > b.priority();
            return a.camera_id < b.camera_id;
        });
        return sorted;
    }
};

}  // namespace nvs

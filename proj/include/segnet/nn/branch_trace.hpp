#pragma once

// Fingerprint of the piecewise branches (ReLU signs, max-pool winners) taken
// by a forward pass. Two evaluations with equal fingerprints lie on the same
// smooth piece of the network.

#include <cstddef>
#include <cstdint>

namespace segnet::nn {

class BranchTrace {
public:
    BranchTrace() : prev_(active_) { active_ = this; }
    ~BranchTrace() { active_ = prev_; }
    BranchTrace(const BranchTrace&) = delete;
    BranchTrace& operator=(const BranchTrace&) = delete;

    static BranchTrace* active() { return active_; }

    void add(std::uint64_t v) {
        hash_ ^= v + 0x9E3779B97F4A7C15ull + (hash_ << 6) + (hash_ >> 2);
        ++count_;
    }
    std::uint64_t hash() const { return hash_; }
    std::size_t count() const { return count_; }

private:
    inline static thread_local BranchTrace* active_ = nullptr;
    BranchTrace* prev_;
    std::uint64_t hash_ = 0xCBF29CE484222325ull;
    std::size_t count_ = 0;
};

}  // namespace segnet::nn

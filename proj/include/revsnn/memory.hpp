#pragma once

#include <cstddef>
#include <mutex>
#include <string>

namespace revsnn {

enum class MemCategory { ReversibleInterior = 0, Boundary = 1, Parameters = 2, Gradients = 3 };
constexpr int kMemCategoryCount = 4;

const char* mem_category_name(MemCategory c);

// Byte registry for what the engine keeps alive. Activation bytes are the
// interior + boundary subtotal; peaks never decrease. Thread safe, but
// peak readings are only executor-order invariant when metered runs use one
// worker (measure passes do).
class MemoryMeter {
public:
    void register_bytes(MemCategory cat, std::size_t bytes);
    void release_bytes(MemCategory cat, std::size_t bytes);
    void reset();

    std::size_t current(MemCategory cat) const;
    std::size_t current_total() const;
    std::size_t current_activation() const;
    std::size_t peak_total() const;
    std::size_t peak_activation() const;

    std::string snapshot_json() const;

private:
    mutable std::mutex mu_;
    std::size_t by_cat_[kMemCategoryCount] = {0, 0, 0, 0};
    std::size_t peak_total_ = 0;
    std::size_t peak_activation_ = 0;
};

// Holds a registration for the lifetime of the owner; move-only.
class MeterLease {
public:
    MeterLease() = default;
    MeterLease(MemoryMeter* meter, MemCategory cat, std::size_t bytes);
    MeterLease(MeterLease&& o) noexcept;
    MeterLease& operator=(MeterLease&& o) noexcept;
    MeterLease(const MeterLease&) = delete;
    MeterLease& operator=(const MeterLease&) = delete;
    ~MeterLease();

    void release();
    void grow(std::size_t extra_bytes);
    std::size_t bytes() const { return bytes_; }

private:
    MemoryMeter* meter_ = nullptr;
    MemCategory cat_ = MemCategory::ReversibleInterior;
    std::size_t bytes_ = 0;
};

}  // namespace revsnn

#include "revsnn/memory.hpp"

#include <stdexcept>
#include <utility>

namespace revsnn {

const char* mem_category_name(MemCategory c) {
    switch (c) {
        case MemCategory::ReversibleInterior: return "reversible_interiors";
        case MemCategory::Boundary: return "boundaries";
        case MemCategory::Parameters: return "parameters";
        case MemCategory::Gradients: return "gradients";
    }
    return "unknown";
}

void MemoryMeter::register_bytes(MemCategory cat, std::size_t bytes) {
    std::lock_guard<std::mutex> lock(mu_);
    by_cat_[static_cast<int>(cat)] += bytes;
    std::size_t total = 0;
    for (std::size_t v : by_cat_) total += v;
    if (total > peak_total_) peak_total_ = total;
    std::size_t act = by_cat_[0] + by_cat_[1];
    if (act > peak_activation_) peak_activation_ = act;
}

void MemoryMeter::release_bytes(MemCategory cat, std::size_t bytes) {
    std::lock_guard<std::mutex> lock(mu_);
    std::size_t& slot = by_cat_[static_cast<int>(cat)];
    if (bytes > slot) throw std::logic_error("MemoryMeter: release exceeds registered bytes");
    slot -= bytes;
}

void MemoryMeter::reset() {
    std::lock_guard<std::mutex> lock(mu_);
    for (std::size_t& v : by_cat_) v = 0;
    peak_total_ = 0;
    peak_activation_ = 0;
}

std::size_t MemoryMeter::current(MemCategory cat) const {
    std::lock_guard<std::mutex> lock(mu_);
    return by_cat_[static_cast<int>(cat)];
}

std::size_t MemoryMeter::current_total() const {
    std::lock_guard<std::mutex> lock(mu_);
    std::size_t total = 0;
    for (std::size_t v : by_cat_) total += v;
    return total;
}

std::size_t MemoryMeter::current_activation() const {
    std::lock_guard<std::mutex> lock(mu_);
    return by_cat_[0] + by_cat_[1];
}

std::size_t MemoryMeter::peak_total() const {
    std::lock_guard<std::mutex> lock(mu_);
    return peak_total_;
}

std::size_t MemoryMeter::peak_activation() const {
    std::lock_guard<std::mutex> lock(mu_);
    return peak_activation_;
}

std::string MemoryMeter::snapshot_json() const {
    std::lock_guard<std::mutex> lock(mu_);
    std::size_t total = 0;
    for (std::size_t v : by_cat_) total += v;
    std::string s = "{";
    for (int i = 0; i < kMemCategoryCount; ++i) {
        s += "\"";
        s += mem_category_name(static_cast<MemCategory>(i));
        s += "\":" + std::to_string(by_cat_[i]) + ",";
    }
    s += "\"current_bytes\":" + std::to_string(total) + ",";
    s += "\"current_activation_bytes\":" + std::to_string(by_cat_[0] + by_cat_[1]) + ",";
    s += "\"peak_bytes\":" + std::to_string(peak_total_) + ",";
    s += "\"peak_activation_bytes\":" + std::to_string(peak_activation_) + "}";
    return s;
}

MeterLease::MeterLease(MemoryMeter* meter, MemCategory cat, std::size_t bytes)
    : meter_(meter), cat_(cat), bytes_(bytes) {
    if (meter_ && bytes_) meter_->register_bytes(cat_, bytes_);
}

MeterLease::MeterLease(MeterLease&& o) noexcept
    : meter_(o.meter_), cat_(o.cat_), bytes_(o.bytes_) {
    o.meter_ = nullptr;
    o.bytes_ = 0;
}

MeterLease& MeterLease::operator=(MeterLease&& o) noexcept {
    if (this != &o) {
        release();
        meter_ = o.meter_;
        cat_ = o.cat_;
        bytes_ = o.bytes_;
        o.meter_ = nullptr;
        o.bytes_ = 0;
    }
    return *this;
}

MeterLease::~MeterLease() { release(); }

void MeterLease::release() {
    if (meter_ && bytes_) meter_->release_bytes(cat_, bytes_);
    meter_ = nullptr;
    bytes_ = 0;
}

void MeterLease::grow(std::size_t extra_bytes) {
    if (meter_ && extra_bytes) meter_->register_bytes(cat_, extra_bytes);
    bytes_ += extra_bytes;
}

}  // namespace revsnn

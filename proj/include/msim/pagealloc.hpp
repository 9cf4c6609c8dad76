#pragma once
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "msim/defaults.hpp"
#include "msim/errors.hpp"
#include "msim/time.hpp"

namespace msim::pagealloc {

using PoolId = std::uint32_t;

struct TokenSlotHandle {
    PoolId pool = 0;
    std::uint32_t page = 0;
    std::uint32_t slot = 0;

    friend bool operator==(const TokenSlotHandle& a, const TokenSlotHandle& b) {
        return a.pool == b.pool && a.page == b.page && a.slot == b.slot;
    }
};

class KvPool;
class PhysicalLedger;
struct AllocResult;
enum class PagePlacement { most_occupied_first, lowest_index_first };

enum class AllocEventKind { map, unmap, buffer_hit, alloc_fail };
const char* to_string(AllocEventKind k);

struct AllocEvent {
    SimTime time_us = 0;
    int gpu_id = 0;
    std::string model_id;
    AllocEventKind kind = AllocEventKind::map;
    std::uint64_t pages = 0;
};

// Per-GPU physical capacity ledger. Weights, KV pools, and the pre-mapped
// buffer all draw from the same page budget. One ledger is one serialization
// domain: callers on the same GPU mutate it sequentially.
class PhysicalLedger {
public:
    PhysicalLedger(int gpu_id, std::uint64_t capacity_pages,
                   std::uint64_t page_bytes = defaults::kPageBytes);

    int gpu_id() const { return gpu_id_; }
    std::uint64_t page_bytes() const { return page_bytes_; }
    std::uint64_t capacity_pages() const { return capacity_pages_; }
    std::uint64_t mapped_pages() const { return kv_mapped_total_; }  // sum of per-pool counts
    std::uint64_t buffer_pages() const { return buffer_pages_; }
    std::uint64_t weight_pages() const { return weight_pages_total_; }
    std::uint64_t free_pages() const {
        return capacity_pages_ - kv_mapped_total_ - buffer_pages_ - weight_pages_total_;
    }
    std::uint64_t pool_mapped_pages(PoolId id) const;

    // Pre-mapped buffer: tops up to min(target, free capacity), returns pages
    // added. The caller decides when the mapping latency elapses.
    std::uint64_t refill_buffer(std::uint64_t target_pages);

    bool reserve_weight_pages(const std::string& model_id, std::uint64_t pages);
    void release_weight_pages(const std::string& model_id);
    std::uint64_t weight_pages_of(const std::string& model_id) const;

    void set_time(SimTime now_us) { now_us_ = now_us; }
    void set_recording(bool on) { recording_ = on; }
    const std::vector<AllocEvent>& events() const { return events_; }
    void clear_events() { events_.clear(); }

    void check_invariants() const;  // throws UsageError on accounting drift

private:
    friend class KvPool;
    friend KvPool alloc_kvcache(PhysicalLedger&, const std::string&, std::uint64_t, std::uint64_t,
                                PagePlacement);
    friend void free_kvcache(PhysicalLedger&, KvPool&);
    friend AllocResult alloc_kv(KvPool&, PhysicalLedger&, std::uint64_t);
    friend void free_kv(KvPool&, PhysicalLedger&, const std::vector<TokenSlotHandle>&);
    PoolId register_pool(const std::string& model_id);
    void unregister_pool(PoolId id, std::uint64_t mapped);
    void pool_mapped_delta(PoolId id, std::int64_t delta);
    std::uint64_t take_buffer(std::uint64_t pages);
    void record(const std::string& model, AllocEventKind kind, std::uint64_t pages);

    int gpu_id_;
    std::uint64_t page_bytes_;
    std::uint64_t capacity_pages_;
    std::uint64_t kv_mapped_total_ = 0;
    std::uint64_t buffer_pages_ = 0;
    std::uint64_t weight_pages_total_ = 0;
    PoolId next_pool_id_ = 1;
    std::map<PoolId, std::uint64_t> pool_pages_;
    std::map<PoolId, std::string> pool_models_;
    std::map<std::string, std::uint64_t> weight_pages_;
    SimTime now_us_ = 0;
    bool recording_ = false;
    std::vector<AllocEvent> events_;
};

struct AllocResult {
    std::vector<TokenSlotHandle> handles;
    std::uint64_t shortfall_pages = 0;  // > 0: nothing was allocated (all-or-nothing)
    std::uint64_t pages_mapped = 0;     // newly mapped directly (latency charge)
    std::uint64_t buffer_hits = 0;      // newly mapped from the pre-mapped buffer
    bool ok() const { return shortfall_pages == 0; }
};

// One model's virtual KV space. Pages are mapped to physical pages strictly on
// demand; creating a pool reserves no physical memory.
class KvPool {
public:
    KvPool(KvPool&&) noexcept = default;
    KvPool& operator=(KvPool&&) noexcept = default;
    KvPool(const KvPool&) = delete;

    PoolId id() const { return id_; }
    const std::string& model_id() const { return model_id_; }
    std::uint64_t token_bytes() const { return token_bytes_; }
    std::uint64_t tokens_per_page() const { return tokens_per_page_; }
    std::uint64_t virtual_capacity_pages() const { return virtual_capacity_pages_; }
    std::uint64_t mapped_pages() const { return mapped_count_; }
    std::uint64_t occupied_slots() const { return occupied_total_; }
    std::uint64_t free_slots_in_mapped() const { return mapped_count_ * tokens_per_page_ - occupied_total_; }
    bool alive() const { return alive_; }

    // Optional hard cap on mapped pages (static partition policies).
    void set_mapped_page_cap(std::optional<std::uint64_t> cap) { mapped_page_cap_ = cap; }
    std::optional<std::uint64_t> mapped_page_cap() const { return mapped_page_cap_; }

    // Tokens allocatable right now without an AllocFailure.
    std::uint64_t allocatable_tokens(const PhysicalLedger& ledger) const;
    bool can_alloc(const PhysicalLedger& ledger, std::uint64_t num_tokens) const {
        return num_tokens <= allocatable_tokens(ledger);
    }

    bool page_mapped(std::uint32_t page) const;
    std::uint64_t page_occupied(std::uint32_t page) const;

private:
    friend KvPool alloc_kvcache(PhysicalLedger&, const std::string&, std::uint64_t, std::uint64_t,
                                PagePlacement);
    friend void free_kvcache(PhysicalLedger&, KvPool&);
    friend AllocResult alloc_kv(KvPool&, PhysicalLedger&, std::uint64_t);
    friend void free_kv(KvPool&, PhysicalLedger&, const std::vector<TokenSlotHandle>&);

    KvPool() = default;

    struct Page {
        bool mapped = false;
        std::uint32_t occupied = 0;
        std::vector<bool> slots;
    };

    int pick_page(bool& needs_map) const;  // next page to fill per placement policy

    PoolId id_ = 0;
    int gpu_id_ = 0;
    std::string model_id_;
    std::uint64_t token_bytes_ = 0;
    std::uint64_t tokens_per_page_ = 0;
    std::uint64_t virtual_capacity_pages_ = 0;
    std::uint64_t mapped_count_ = 0;
    std::uint64_t occupied_total_ = 0;
    PagePlacement placement_ = PagePlacement::most_occupied_first;
    std::optional<std::uint64_t> mapped_page_cap_;
    bool alive_ = false;
    std::vector<Page> pages_;
};

// Creates a pool with every page unmapped; the ledger is untouched (virtual
// reservation costs nothing). Duplicate pool for a model on one GPU is misuse.
KvPool alloc_kvcache(PhysicalLedger& ledger, const std::string& model_id,
                     std::uint64_t token_bytes, std::uint64_t virtual_capacity_pages,
                     PagePlacement placement = PagePlacement::most_occupied_first);

// Unmaps everything the pool holds and retires it; later use of the pool or
// its handles is rejected.
void free_kvcache(PhysicalLedger& ledger, KvPool& pool);

// All-or-nothing allocation of num_tokens slots. Fills the most occupied
// partially-filled page first; maps new pages only when every partial page is
// exhausted, drawing from the pre-mapped buffer before mapping directly.
AllocResult alloc_kv(KvPool& pool, PhysicalLedger& ledger, std::uint64_t num_tokens);

// Releases slots; a page whose occupancy reaches zero is unmapped and its
// physical page returned to the ledger.
void free_kv(KvPool& pool, PhysicalLedger& ledger, const std::vector<TokenSlotHandle>& handles);

std::uint64_t refill_buffer(PhysicalLedger& ledger, std::uint64_t target_pages);

}  // namespace msim::pagealloc

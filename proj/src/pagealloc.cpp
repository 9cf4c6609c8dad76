#include "msim/pagealloc.hpp"

#include <algorithm>

namespace msim::pagealloc {

const char* to_string(AllocEventKind k) {
    switch (k) {
        case AllocEventKind::map: return "map";
        case AllocEventKind::unmap: return "unmap";
        case AllocEventKind::buffer_hit: return "buffer_hit";
        case AllocEventKind::alloc_fail: return "alloc_fail";
    }
    return "?";
}

PhysicalLedger::PhysicalLedger(int gpu_id, std::uint64_t capacity_pages, std::uint64_t page_bytes)
    : gpu_id_(gpu_id), page_bytes_(page_bytes), capacity_pages_(capacity_pages) {
    if (page_bytes_ == 0) throw UsageError("ledger: zero page size");
}

std::uint64_t PhysicalLedger::pool_mapped_pages(PoolId id) const {
    auto it = pool_pages_.find(id);
    return it == pool_pages_.end() ? 0 : it->second;
}

std::uint64_t PhysicalLedger::refill_buffer(std::uint64_t target_pages) {
    if (target_pages <= buffer_pages_) return 0;
    const std::uint64_t want = target_pages - buffer_pages_;
    const std::uint64_t add = std::min(want, free_pages());
    buffer_pages_ += add;
    if (add > 0) record("", AllocEventKind::map, add);
    return add;
}

std::uint64_t PhysicalLedger::take_buffer(std::uint64_t pages) {
    const std::uint64_t taken = std::min(pages, buffer_pages_);
    buffer_pages_ -= taken;
    return taken;
}

bool PhysicalLedger::reserve_weight_pages(const std::string& model_id, std::uint64_t pages) {
    if (weight_pages_.count(model_id)) {
        throw UsageError("ledger: weights already resident for model " + model_id);
    }
    if (pages > free_pages()) return false;
    weight_pages_[model_id] = pages;
    weight_pages_total_ += pages;
    return true;
}

void PhysicalLedger::release_weight_pages(const std::string& model_id) {
    auto it = weight_pages_.find(model_id);
    if (it == weight_pages_.end()) {
        throw UsageError("ledger: no resident weights for model " + model_id);
    }
    weight_pages_total_ -= it->second;
    weight_pages_.erase(it);
}

std::uint64_t PhysicalLedger::weight_pages_of(const std::string& model_id) const {
    auto it = weight_pages_.find(model_id);
    return it == weight_pages_.end() ? 0 : it->second;
}

PoolId PhysicalLedger::register_pool(const std::string& model_id) {
    for (const auto& [id, model] : pool_models_) {
        if (model == model_id) {
            throw UsageError("ledger: duplicate KV pool for model " + model_id);
        }
    }
    const PoolId id = next_pool_id_++;
    pool_pages_[id] = 0;
    pool_models_[id] = model_id;
    return id;
}

void PhysicalLedger::unregister_pool(PoolId id, std::uint64_t mapped) {
    auto it = pool_pages_.find(id);
    if (it == pool_pages_.end()) throw UsageError("ledger: unknown pool");
    kv_mapped_total_ -= mapped;
    if (mapped > 0) record(pool_models_[id], AllocEventKind::unmap, mapped);
    pool_pages_.erase(it);
    pool_models_.erase(id);
}

void PhysicalLedger::pool_mapped_delta(PoolId id, std::int64_t delta) {
    auto it = pool_pages_.find(id);
    if (it == pool_pages_.end()) throw UsageError("ledger: unknown pool");
    it->second = static_cast<std::uint64_t>(static_cast<std::int64_t>(it->second) + delta);
    kv_mapped_total_ = static_cast<std::uint64_t>(static_cast<std::int64_t>(kv_mapped_total_) + delta);
}

void PhysicalLedger::record(const std::string& model, AllocEventKind kind, std::uint64_t pages) {
    if (!recording_) return;
    events_.push_back(AllocEvent{now_us_, gpu_id_, model, kind, pages});
}

void PhysicalLedger::check_invariants() const {
    std::uint64_t sum = 0;
    for (const auto& [id, pages] : pool_pages_) sum += pages;
    if (sum != kv_mapped_total_) throw UsageError("ledger: per-pool counts drifted from total");
    if (kv_mapped_total_ + buffer_pages_ + weight_pages_total_ > capacity_pages_) {
        throw UsageError("ledger: mapped + buffer + weights exceeds capacity");
    }
}

KvPool alloc_kvcache(PhysicalLedger& ledger, const std::string& model_id,
                     std::uint64_t token_bytes, std::uint64_t virtual_capacity_pages,
                     PagePlacement placement) {
    if (token_bytes == 0 || token_bytes > ledger.page_bytes()) {
        throw UsageError("alloc_kvcache: token size must be in (0, page_bytes]");
    }
    if (virtual_capacity_pages < 1) {
        throw UsageError("alloc_kvcache: virtual capacity must be >= 1 page");
    }
    KvPool pool;
    pool.id_ = ledger.register_pool(model_id);
    pool.gpu_id_ = ledger.gpu_id();
    pool.model_id_ = model_id;
    pool.token_bytes_ = token_bytes;
    pool.tokens_per_page_ = ledger.page_bytes() / token_bytes;
    pool.virtual_capacity_pages_ = virtual_capacity_pages;
    pool.placement_ = placement;
    pool.alive_ = true;
    pool.pages_.resize(virtual_capacity_pages);
    return pool;
}

void free_kvcache(PhysicalLedger& ledger, KvPool& pool) {
    if (!pool.alive_) throw UsageError("free_kvcache: pool already freed");
    ledger.unregister_pool(pool.id_, pool.mapped_count_);
    pool.alive_ = false;
    pool.pages_.clear();
    pool.mapped_count_ = 0;
    pool.occupied_total_ = 0;
}

bool KvPool::page_mapped(std::uint32_t page) const {
    return page < pages_.size() && pages_[page].mapped;
}

std::uint64_t KvPool::page_occupied(std::uint32_t page) const {
    return page < pages_.size() ? pages_[page].occupied : 0;
}

std::uint64_t KvPool::allocatable_tokens(const PhysicalLedger& ledger) const {
    if (!alive_) return 0;
    std::uint64_t new_page_budget = ledger.free_pages() + ledger.buffer_pages();
    new_page_budget = std::min(new_page_budget, virtual_capacity_pages_ - mapped_count_);
    if (mapped_page_cap_) {
        const std::uint64_t cap = *mapped_page_cap_;
        new_page_budget = std::min(new_page_budget, cap > mapped_count_ ? cap - mapped_count_ : 0);
    }
    return free_slots_in_mapped() + new_page_budget * tokens_per_page_;
}

int KvPool::pick_page(bool& needs_map) const {
    needs_map = false;
    int best = -1;
    if (placement_ == PagePlacement::most_occupied_first) {
        std::uint32_t best_occ = 0;
        for (std::size_t i = 0; i < pages_.size(); ++i) {
            const Page& p = pages_[i];
            if (!p.mapped || p.occupied >= tokens_per_page_) continue;
            if (best < 0 || p.occupied > best_occ) {
                best = static_cast<int>(i);
                best_occ = p.occupied;
            }
        }
    } else {
        for (std::size_t i = 0; i < pages_.size(); ++i) {
            const Page& p = pages_[i];
            if (p.mapped && p.occupied < tokens_per_page_) {
                best = static_cast<int>(i);
                break;
            }
        }
    }
    if (best >= 0) return best;
    needs_map = true;
    for (std::size_t i = 0; i < pages_.size(); ++i) {
        if (!pages_[i].mapped) return static_cast<int>(i);
    }
    return -1;
}

AllocResult alloc_kv(KvPool& pool, PhysicalLedger& ledger, std::uint64_t num_tokens) {
    if (!pool.alive_) throw UsageError("alloc_kv: pool was freed");
    if (pool.gpu_id_ != ledger.gpu_id()) throw UsageError("alloc_kv: pool belongs to another GPU");
    AllocResult res;
    if (num_tokens == 0) return res;

    const std::uint64_t partial_free = pool.free_slots_in_mapped();
    std::uint64_t new_pages = 0;
    if (num_tokens > partial_free) {
        const std::uint64_t tpp = pool.tokens_per_page_;
        new_pages = (num_tokens - partial_free + tpp - 1) / tpp;
    }

    // All-or-nothing: any shortfall aborts before state changes.
    const std::uint64_t virtual_avail = pool.virtual_capacity_pages_ - pool.mapped_count_;
    std::uint64_t budget = ledger.free_pages() + ledger.buffer_pages();
    budget = std::min(budget, virtual_avail);
    if (pool.mapped_page_cap_) {
        const std::uint64_t cap = *pool.mapped_page_cap_;
        budget = std::min(budget, cap > pool.mapped_count_ ? cap - pool.mapped_count_ : 0);
    }
    if (new_pages > budget) {
        res.shortfall_pages = new_pages - budget;
        ledger.record(pool.model_id_, AllocEventKind::alloc_fail, res.shortfall_pages);
        return res;
    }

    res.buffer_hits = ledger.take_buffer(new_pages);
    res.pages_mapped = new_pages - res.buffer_hits;
    if (res.buffer_hits > 0) ledger.record(pool.model_id_, AllocEventKind::buffer_hit, res.buffer_hits);
    if (res.pages_mapped > 0) ledger.record(pool.model_id_, AllocEventKind::map, res.pages_mapped);
    ledger.pool_mapped_delta(pool.id_, static_cast<std::int64_t>(new_pages));

    std::uint64_t remaining = num_tokens;
    res.handles.reserve(num_tokens);
    while (remaining > 0) {
        bool needs_map = false;
        const int idx = pool.pick_page(needs_map);
        if (idx < 0) throw UsageError("alloc_kv: internal page accounting error");
        KvPool::Page& page = pool.pages_[static_cast<std::size_t>(idx)];
        if (needs_map) {
            page.mapped = true;
            page.occupied = 0;
            page.slots.assign(pool.tokens_per_page_, false);
            ++pool.mapped_count_;
        }
        for (std::uint32_t s = 0; s < pool.tokens_per_page_ && remaining > 0; ++s) {
            if (page.slots[s]) continue;
            page.slots[s] = true;
            ++page.occupied;
            ++pool.occupied_total_;
            --remaining;
            res.handles.push_back(TokenSlotHandle{pool.id_, static_cast<std::uint32_t>(idx), s});
        }
    }
    return res;
}

void free_kv(KvPool& pool, PhysicalLedger& ledger, const std::vector<TokenSlotHandle>& handles) {
    if (!pool.alive_) throw UsageError("free_kv: pool was freed");
    if (pool.gpu_id_ != ledger.gpu_id()) throw UsageError("free_kv: pool belongs to another GPU");
    for (const TokenSlotHandle& h : handles) {
        if (h.pool != pool.id_) throw UsageError("free_kv: handle belongs to another pool");
        if (h.page >= pool.pages_.size()) throw UsageError("free_kv: page index out of range");
        KvPool::Page& page = pool.pages_[h.page];
        if (!page.mapped || h.slot >= page.slots.size() || !page.slots[h.slot]) {
            throw UsageError("free_kv: stale handle");
        }
        page.slots[h.slot] = false;
        --page.occupied;
        --pool.occupied_total_;
        if (page.occupied == 0) {
            page.mapped = false;
            page.slots.clear();
            --pool.mapped_count_;
            ledger.pool_mapped_delta(pool.id_, -1);
            ledger.record(pool.model_id_, AllocEventKind::unmap, 1);
        }
    }
}

std::uint64_t refill_buffer(PhysicalLedger& ledger, std::uint64_t target_pages) {
    return ledger.refill_buffer(target_pages);
}

}  // namespace msim::pagealloc

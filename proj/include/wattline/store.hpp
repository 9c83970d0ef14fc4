#pragma once

// Embedded single-file relational store for workload units and their
// aggregate metrics. Single writer by design; readers share the connection
// under a mutex. Snapshot backup uses the SQLite online-backup API so the
// copy is a consistent point-in-time view.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <sqlite3.h>

#include "wattline/util.hpp"

namespace wattline {

enum class ResourceManager { slurm, libvirt, kubelet };

inline std::string_view to_string(ResourceManager m) {
    switch (m) {
        case ResourceManager::slurm: return "slurm";
        case ResourceManager::libvirt: return "libvirt";
        default: return "kubelet";
    }
}

inline std::optional<ResourceManager> resource_manager_from_string(std::string_view s) {
    if (s == "slurm") return ResourceManager::slurm;
    if (s == "libvirt") return ResourceManager::libvirt;
    if (s == "kubelet") return ResourceManager::kubelet;
    return std::nullopt;
}

// One compute unit (batch job / VM / pod) in the unified schema.
struct WorkloadUnit {
    std::string uuid;
    std::string cluster_id;
    ResourceManager resource_manager = ResourceManager::slurm;
    std::string user;
    std::string project;
    int64_t created_at = 0;
    int64_t started_at = 0;
    std::optional<int64_t> ended_at;
    int alloc_cpus = 0;
    int64_t alloc_memory_bytes = 0;
    std::vector<int> gpu_indices;
    bool purged = false;

    void validate() const {
        if (uuid.empty() || cluster_id.empty()) throw ContractError("unit key fields empty");
        if (started_at < created_at) throw ContractError("started_at before created_at");
        if (ended_at && *ended_at < started_at) throw ContractError("ended_at before started_at");
        if (alloc_cpus < 0 || alloc_memory_bytes < 0) throw ContractError("negative allocation");
    }

    std::optional<int64_t> duration_ms() const {
        if (!ended_at) return std::nullopt;
        return *ended_at - started_at;
    }
};

enum class AggregateScope { unit, user, project };

inline std::string_view to_string(AggregateScope s) {
    switch (s) {
        case AggregateScope::unit: return "unit";
        case AggregateScope::user: return "user";
        default: return "project";
    }
}

inline std::optional<AggregateScope> aggregate_scope_from_string(std::string_view s) {
    if (s == "unit") return AggregateScope::unit;
    if (s == "user") return AggregateScope::user;
    if (s == "project") return AggregateScope::project;
    return std::nullopt;
}

struct AggregateMetrics {
    AggregateScope scope = AggregateScope::unit;
    std::string key;
    int64_t window_start = 0;
    int64_t window_end = 0;
    double total_cpu_time_seconds = 0;
    double avg_cpu_usage_fraction = 0;
    double avg_memory_usage_fraction = 0;
    double total_energy_kwh = 0;
    double total_emissions_grams = 0;
    std::optional<double> avg_gpu_usage_fraction;
    bool no_data = false;
};

struct StoreError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string join_ints(const std::vector<int>& values) {
    std::string out;
    for (int v : values) {
        if (!out.empty()) out += ",";
        out += std::to_string(v);
    }
    return out;
}

inline std::vector<int> split_ints(std::string_view csv) {
    std::vector<int> out;
    if (csv.empty()) return out;
    for (const auto& part : util::split(csv, ','))
        if (auto v = util::parse_int(part)) out.push_back(static_cast<int>(*v));
    return out;
}

class Statement {
public:
    Statement(sqlite3* db, const char* sql) {
        if (sqlite3_prepare_v2(db, sql, -1, &stmt_, nullptr) != SQLITE_OK)
            throw StoreError(std::string("prepare failed: ") + sqlite3_errmsg(db));
    }
    ~Statement() { sqlite3_finalize(stmt_); }
    Statement(const Statement&) = delete;

    Statement& bind(int idx, const std::string& v) {
        sqlite3_bind_text(stmt_, idx, v.c_str(), -1, SQLITE_TRANSIENT);
        return *this;
    }
    Statement& bind(int idx, int64_t v) {
        sqlite3_bind_int64(stmt_, idx, v);
        return *this;
    }
    Statement& bind(int idx, double v) {
        sqlite3_bind_double(stmt_, idx, v);
        return *this;
    }
    Statement& bind_null(int idx) {
        sqlite3_bind_null(stmt_, idx);
        return *this;
    }

    bool step() {
        int rc = sqlite3_step(stmt_);
        if (rc == SQLITE_ROW) return true;
        if (rc == SQLITE_DONE) return false;
        throw StoreError(std::string("step failed: ") + sqlite3_errstr(rc));
    }

    std::string column_text(int idx) const {
        const unsigned char* t = sqlite3_column_text(stmt_, idx);
        return t ? reinterpret_cast<const char*>(t) : "";
    }
    int64_t column_int(int idx) const { return sqlite3_column_int64(stmt_, idx); }
    double column_double(int idx) const { return sqlite3_column_double(stmt_, idx); }
    bool column_null(int idx) const { return sqlite3_column_type(stmt_, idx) == SQLITE_NULL; }

private:
    sqlite3_stmt* stmt_ = nullptr;
};

}  // namespace detail

class Store {
public:
    explicit Store(const std::filesystem::path& db_path) {
        if (sqlite3_open_v2(db_path.string().c_str(), &db_,
                            SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_FULLMUTEX,
                            nullptr) != SQLITE_OK)
            throw StoreError("cannot open store: " + db_path.string());
        exec("PRAGMA journal_mode=WAL");
        exec("PRAGMA synchronous=NORMAL");
        exec(R"sql(
CREATE TABLE IF NOT EXISTS units(
  cluster_id TEXT NOT NULL,
  uuid TEXT NOT NULL,
  resource_manager TEXT NOT NULL,
  user TEXT NOT NULL,
  project TEXT NOT NULL,
  created_at INTEGER NOT NULL,
  started_at INTEGER NOT NULL,
  ended_at INTEGER,
  alloc_cpus INTEGER NOT NULL,
  alloc_memory_bytes INTEGER NOT NULL,
  gpu_indices TEXT NOT NULL DEFAULT '',
  purged INTEGER NOT NULL DEFAULT 0,
  PRIMARY KEY(cluster_id, uuid)))sql");
        exec(R"sql(
CREATE TABLE IF NOT EXISTS unit_aggregates(
  cluster_id TEXT NOT NULL,
  uuid TEXT NOT NULL,
  window_start INTEGER NOT NULL,
  window_end INTEGER NOT NULL,
  total_cpu_time_seconds REAL NOT NULL,
  avg_cpu_usage_fraction REAL NOT NULL,
  avg_memory_usage_fraction REAL NOT NULL,
  total_energy_kwh REAL NOT NULL,
  total_emissions_grams REAL NOT NULL,
  avg_gpu_usage_fraction REAL,
  no_data INTEGER NOT NULL DEFAULT 0,
  PRIMARY KEY(cluster_id, uuid)))sql");
        exec("CREATE INDEX IF NOT EXISTS idx_units_user ON units(user)");
        exec("CREATE INDEX IF NOT EXISTS idx_units_project ON units(project)");
    }

    ~Store() {
        if (db_) sqlite3_close(db_);
    }
    Store(const Store&) = delete;
    Store& operator=(const Store&) = delete;

    // idempotent upsert keyed on (cluster_id, uuid); purge state survives
    void upsert_unit(const WorkloadUnit& unit) {
        unit.validate();
        std::lock_guard<std::mutex> g(mutex_);
        detail::Statement stmt(db_, R"sql(
INSERT INTO units(cluster_id, uuid, resource_manager, user, project, created_at,
                  started_at, ended_at, alloc_cpus, alloc_memory_bytes, gpu_indices, purged)
VALUES(?,?,?,?,?,?,?,?,?,?,?,0)
ON CONFLICT(cluster_id, uuid) DO UPDATE SET
  resource_manager=excluded.resource_manager, user=excluded.user, project=excluded.project,
  created_at=excluded.created_at, started_at=excluded.started_at, ended_at=excluded.ended_at,
  alloc_cpus=excluded.alloc_cpus, alloc_memory_bytes=excluded.alloc_memory_bytes,
  gpu_indices=excluded.gpu_indices)sql");
        stmt.bind(1, unit.cluster_id)
            .bind(2, unit.uuid)
            .bind(3, std::string(to_string(unit.resource_manager)))
            .bind(4, unit.user)
            .bind(5, unit.project)
            .bind(6, unit.created_at)
            .bind(7, unit.started_at);
        if (unit.ended_at)
            stmt.bind(8, *unit.ended_at);
        else
            stmt.bind_null(8);
        stmt.bind(9, static_cast<int64_t>(unit.alloc_cpus))
            .bind(10, unit.alloc_memory_bytes)
            .bind(11, detail::join_ints(unit.gpu_indices));
        stmt.step();
    }

    std::optional<WorkloadUnit> find_unit(const std::string& cluster_id,
                                          const std::string& uuid) const {
        std::lock_guard<std::mutex> g(mutex_);
        detail::Statement stmt(db_, "SELECT * FROM units WHERE cluster_id=? AND uuid=?");
        stmt.bind(1, cluster_id).bind(2, uuid);
        if (!stmt.step()) return std::nullopt;
        return unit_from_row(stmt);
    }

    struct UnitFilter {
        std::optional<std::string> user;
        std::optional<std::string> project;
        std::optional<int64_t> overlap_start;
        std::optional<int64_t> overlap_end;
    };

    std::vector<WorkloadUnit> list_units(const UnitFilter& filter = {}) const {
        std::lock_guard<std::mutex> g(mutex_);
        std::string sql = "SELECT * FROM units WHERE 1=1";
        if (filter.user) sql += " AND user=?1";
        if (filter.project) sql += " AND project=?2";
        // window overlap: unit started before window end, and not ended
        // before window start
        if (filter.overlap_end) sql += " AND started_at<=?4";
        if (filter.overlap_start) sql += " AND (ended_at IS NULL OR ended_at>=?3)";
        sql += " ORDER BY cluster_id, uuid";
        detail::Statement stmt(db_, sql.c_str());
        if (filter.user) stmt.bind(1, *filter.user);
        if (filter.project) stmt.bind(2, *filter.project);
        if (filter.overlap_start) stmt.bind(3, *filter.overlap_start);
        if (filter.overlap_end) stmt.bind(4, *filter.overlap_end);
        std::vector<WorkloadUnit> units;
        while (stmt.step()) units.push_back(unit_from_row(stmt));
        return units;
    }

    int64_t unit_count() const {
        std::lock_guard<std::mutex> g(mutex_);
        detail::Statement stmt(db_, "SELECT COUNT(*) FROM units");
        stmt.step();
        return stmt.column_int(0);
    }

    // ended units below the cutoff that still have TSDB series
    std::vector<WorkloadUnit> units_to_purge(int64_t cutoff_seconds) const {
        std::lock_guard<std::mutex> g(mutex_);
        detail::Statement stmt(db_,
                               "SELECT * FROM units WHERE purged=0 AND ended_at IS NOT NULL "
                               "AND (ended_at - started_at) < ? ORDER BY cluster_id, uuid");
        stmt.bind(1, cutoff_seconds * 1000);
        std::vector<WorkloadUnit> units;
        while (stmt.step()) units.push_back(unit_from_row(stmt));
        return units;
    }

    void mark_purged(const std::string& cluster_id, const std::string& uuid) {
        std::lock_guard<std::mutex> g(mutex_);
        detail::Statement stmt(db_, "UPDATE units SET purged=1 WHERE cluster_id=? AND uuid=?");
        stmt.bind(1, cluster_id).bind(2, uuid);
        stmt.step();
    }

    void upsert_unit_aggregate(const std::string& cluster_id, const std::string& uuid,
                               const AggregateMetrics& agg) {
        std::lock_guard<std::mutex> g(mutex_);
        detail::Statement stmt(db_, R"sql(
INSERT INTO unit_aggregates(cluster_id, uuid, window_start, window_end,
  total_cpu_time_seconds, avg_cpu_usage_fraction, avg_memory_usage_fraction,
  total_energy_kwh, total_emissions_grams, avg_gpu_usage_fraction, no_data)
VALUES(?,?,?,?,?,?,?,?,?,?,?)
ON CONFLICT(cluster_id, uuid) DO UPDATE SET
  window_start=excluded.window_start, window_end=excluded.window_end,
  total_cpu_time_seconds=excluded.total_cpu_time_seconds,
  avg_cpu_usage_fraction=excluded.avg_cpu_usage_fraction,
  avg_memory_usage_fraction=excluded.avg_memory_usage_fraction,
  total_energy_kwh=excluded.total_energy_kwh,
  total_emissions_grams=excluded.total_emissions_grams,
  avg_gpu_usage_fraction=excluded.avg_gpu_usage_fraction,
  no_data=excluded.no_data)sql");
        stmt.bind(1, cluster_id)
            .bind(2, uuid)
            .bind(3, agg.window_start)
            .bind(4, agg.window_end)
            .bind(5, agg.total_cpu_time_seconds)
            .bind(6, agg.avg_cpu_usage_fraction)
            .bind(7, agg.avg_memory_usage_fraction)
            .bind(8, agg.total_energy_kwh)
            .bind(9, agg.total_emissions_grams);
        if (agg.avg_gpu_usage_fraction)
            stmt.bind(10, *agg.avg_gpu_usage_fraction);
        else
            stmt.bind_null(10);
        stmt.bind(11, static_cast<int64_t>(agg.no_data ? 1 : 0));
        stmt.step();
    }

    std::optional<AggregateMetrics> unit_aggregate(const std::string& cluster_id,
                                                   const std::string& uuid) const {
        std::lock_guard<std::mutex> g(mutex_);
        detail::Statement stmt(db_, "SELECT * FROM unit_aggregates WHERE cluster_id=? AND uuid=?");
        stmt.bind(1, cluster_id).bind(2, uuid);
        if (!stmt.step()) return std::nullopt;
        return aggregate_from_row(stmt, uuid);
    }

    struct UnitAggregateRow {
        WorkloadUnit unit;
        AggregateMetrics metrics;
    };

    // stored unit aggregates joined with their units, filtered by owner scope
    std::vector<UnitAggregateRow> unit_aggregates_for(AggregateScope scope, const std::string& key,
                                                      int64_t window_start,
                                                      int64_t window_end) const {
        if (scope == AggregateScope::unit)
            throw ContractError("scope aggregation is for user/project scopes");
        std::lock_guard<std::mutex> g(mutex_);
        std::string sql =
            "SELECT u.*, a.window_start, a.window_end, a.total_cpu_time_seconds, "
            "a.avg_cpu_usage_fraction, a.avg_memory_usage_fraction, a.total_energy_kwh, "
            "a.total_emissions_grams, a.avg_gpu_usage_fraction, a.no_data "
            "FROM units u JOIN unit_aggregates a ON u.cluster_id=a.cluster_id AND u.uuid=a.uuid "
            "WHERE u.started_at<=? AND (u.ended_at IS NULL OR u.ended_at>=?) AND ";
        sql += scope == AggregateScope::user ? "u.user=?" : "u.project=?";
        sql += " ORDER BY u.cluster_id, u.uuid";
        detail::Statement stmt(db_, sql.c_str());
        stmt.bind(1, window_end).bind(2, window_start).bind(3, key);
        std::vector<UnitAggregateRow> rows;
        while (stmt.step()) {
            UnitAggregateRow row;
            row.unit = unit_from_row(stmt);
            row.metrics.scope = AggregateScope::unit;
            row.metrics.key = row.unit.uuid;
            row.metrics.window_start = stmt.column_int(12);
            row.metrics.window_end = stmt.column_int(13);
            row.metrics.total_cpu_time_seconds = stmt.column_double(14);
            row.metrics.avg_cpu_usage_fraction = stmt.column_double(15);
            row.metrics.avg_memory_usage_fraction = stmt.column_double(16);
            row.metrics.total_energy_kwh = stmt.column_double(17);
            row.metrics.total_emissions_grams = stmt.column_double(18);
            if (!stmt.column_null(19)) row.metrics.avg_gpu_usage_fraction = stmt.column_double(19);
            row.metrics.no_data = stmt.column_int(20) != 0;
            rows.push_back(std::move(row));
        }
        return rows;
    }

    // Consistent point-in-time copy via the online backup API. The tmp +
    // rename keeps the previous snapshot intact if anything fails mid-way.
    void backup_to(const std::filesystem::path& dest) const {
        std::lock_guard<std::mutex> g(mutex_);
        std::filesystem::path tmp = dest;
        tmp += ".tmp";
        sqlite3* out = nullptr;
        if (sqlite3_open_v2(tmp.string().c_str(), &out,
                            SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE, nullptr) != SQLITE_OK) {
            sqlite3_close(out);
            throw StoreError("cannot open backup destination: " + tmp.string());
        }
        sqlite3_backup* backup = sqlite3_backup_init(out, "main", db_, "main");
        bool ok = backup != nullptr;
        if (backup) {
            ok = sqlite3_backup_step(backup, -1) == SQLITE_DONE;
            sqlite3_backup_finish(backup);
        }
        int close_rc = sqlite3_close(out);
        if (!ok || close_rc != SQLITE_OK) {
            std::error_code ec;
            std::filesystem::remove(tmp, ec);
            throw StoreError("backup failed, previous snapshot untouched");
        }
        std::filesystem::rename(tmp, dest);
    }

private:
    void exec(const char* sql) {
        char* err = nullptr;
        if (sqlite3_exec(db_, sql, nullptr, nullptr, &err) != SQLITE_OK) {
            std::string message = err ? err : "unknown";
            sqlite3_free(err);
            throw StoreError("exec failed: " + message);
        }
    }

    static WorkloadUnit unit_from_row(const detail::Statement& stmt) {
        WorkloadUnit u;
        u.cluster_id = stmt.column_text(0);
        u.uuid = stmt.column_text(1);
        u.resource_manager =
            resource_manager_from_string(stmt.column_text(2)).value_or(ResourceManager::slurm);
        u.user = stmt.column_text(3);
        u.project = stmt.column_text(4);
        u.created_at = stmt.column_int(5);
        u.started_at = stmt.column_int(6);
        if (!stmt.column_null(7)) u.ended_at = stmt.column_int(7);
        u.alloc_cpus = static_cast<int>(stmt.column_int(8));
        u.alloc_memory_bytes = stmt.column_int(9);
        u.gpu_indices = detail::split_ints(stmt.column_text(10));
        u.purged = stmt.column_int(11) != 0;
        return u;
    }

    static AggregateMetrics aggregate_from_row(const detail::Statement& stmt,
                                               const std::string& uuid) {
        AggregateMetrics a;
        a.scope = AggregateScope::unit;
        a.key = uuid;
        a.window_start = stmt.column_int(2);
        a.window_end = stmt.column_int(3);
        a.total_cpu_time_seconds = stmt.column_double(4);
        a.avg_cpu_usage_fraction = stmt.column_double(5);
        a.avg_memory_usage_fraction = stmt.column_double(6);
        a.total_energy_kwh = stmt.column_double(7);
        a.total_emissions_grams = stmt.column_double(8);
        if (!stmt.column_null(9)) a.avg_gpu_usage_fraction = stmt.column_double(9);
        a.no_data = stmt.column_int(10) != 0;
        return a;
    }

    sqlite3* db_ = nullptr;
    mutable std::mutex mutex_;
};

}  // namespace wattline

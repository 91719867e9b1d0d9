// SPDX-License-Identifier: Apache-2.0
//
// beamtrain - beam training and channel tracking for mmWave links
//
// Licensed under the Apache License, Version 2.0 (the "License"); you may not use this file
// except in compliance with the License. You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software distributed under the License
// is distributed on an "AS IS" BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express
// or implied. See the License for the specific language governing permissions and limitations under
// the License.
// ------------------------------------------------------------------------------------------------
//
// Experiment-suite front end: flat key=value suite files, Cartesian sweep expansion,
// a concurrent row runner, CSV emission, and result summarisation.
//
// Suite format: one "key = value..." pair per line, full-line # comments. A key listed
// with several values (whitespace or comma separated) becomes a sweep axis; rows are the
// Cartesian product in declaration order (first declared axis outermost), with the seed
// list as the innermost axis. CSV bodies are reproducible byte-for-byte for fixed seeds
// when runtime_s is suppressed; wall-clock data lives in a sidecar .meta file.
// ------------------------------------------------------------------------------------------------

#ifndef beamtrain_cli_experiments_H
#define beamtrain_cli_experiments_H

#include "beamtrain/link_simulator.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>

namespace beamtrain
{

inline constexpr const char *csv_header =
    "suite,mode,snr_db,beta,T_c,T_d,N_d,overhead,ber,nmse,seed,runtime_s,error";

inline const char *mode_name(SimMode m)
{
    switch (m)
    {
    case SimMode::ConventionalCycling:
        return "ConventionalCycling";
    case SimMode::DedicatedDual:
        return "DedicatedDual";
    default:
        return "DedicatedSingle";
    }
}

inline bool parse_mode(const std::string &s, SimMode &out)
{
    if (s == "ConventionalCycling")
        out = SimMode::ConventionalCycling;
    else if (s == "DedicatedDual")
        out = SimMode::DedicatedDual;
    else if (s == "DedicatedSingle")
        out = SimMode::DedicatedSingle;
    else
        return false;
    return true;
}

// Shortest float form with 9 significant digits; infinities print as the bare literal.
inline std::string format_float(double v)
{
    if (std::isinf(v))
        return v > 0 ? "inf" : "-inf";
    if (std::isnan(v))
        return "nan";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

namespace cli
{

inline void fail_key(const std::string &key, const char *what)
{
    throw std::invalid_argument(std::string(what) + ": " + key);
}

inline long parse_long(const std::string &key, const std::string &tok)
{
    std::size_t pos = 0;
    long v = 0;
    try
    {
        v = std::stol(tok, &pos);
    }
    catch (const std::exception &)
    {
        fail_key(key, "not an integer");
    }
    if (pos != tok.size())
        fail_key(key, "not an integer");
    return v;
}

inline double parse_double(const std::string &key, const std::string &tok)
{
    std::size_t pos = 0;
    double v = 0.0;
    try
    {
        v = std::stod(tok, &pos);
    }
    catch (const std::exception &)
    {
        fail_key(key, "not a number");
    }
    if (pos != tok.size())
        fail_key(key, "not a number");
    return v;
}

inline std::uint64_t parse_seed(const std::string &key, const std::string &tok)
{
    std::size_t pos = 0;
    unsigned long long v = 0;
    try
    {
        v = std::stoull(tok, &pos);
    }
    catch (const std::exception &)
    {
        fail_key(key, "not a seed");
    }
    if (pos != tok.size())
        fail_key(key, "not a seed");
    return static_cast<std::uint64_t>(v);
}

inline bool parse_bool(const std::string &key, const std::string &tok)
{
    if (tok == "true" || tok == "1")
        return true;
    if (tok == "false" || tok == "0")
        return false;
    fail_key(key, "not a boolean");
    return false;
}

inline std::vector<std::string> split_values(const std::string &s)
{
    std::vector<std::string> out;
    std::string cur;
    for (char c : s)
    {
        if (c == ',' || c == ' ' || c == '\t')
        {
            if (!cur.empty())
                out.push_back(std::move(cur));
            cur.clear();
        }
        else
            cur.push_back(c);
    }
    if (!cur.empty())
        out.push_back(std::move(cur));
    return out;
}

inline std::string trim(const std::string &s)
{
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos)
        return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

} // namespace cli

// Ordered key -> value-token-list mapping; later assignments to a key replace earlier
// ones but keep the original declaration position (the sweep order).
struct KeyValues
{
    std::vector<std::pair<std::string, std::vector<std::string>>> items;

    void assign(const std::string &key, std::vector<std::string> values)
    {
        for (auto &kv : items)
            if (kv.first == key)
            {
                kv.second = std::move(values);
                return;
            }
        items.emplace_back(key, std::move(values));
    }

    const std::vector<std::string> *find(const std::string &key) const
    {
        for (const auto &kv : items)
            if (kv.first == key)
                return &kv.second;
        return nullptr;
    }
};

// Parses "key = value..." lines; # starts a full-line comment, blank lines are skipped.
inline KeyValues parse_key_value_text(std::istream &in)
{
    KeyValues kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line))
    {
        ++lineno;
        std::string t = cli::trim(line);
        if (t.empty() || t[0] == '#')
            continue;
        std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("line " + std::to_string(lineno) +
                                        ": expected key = value");
        std::string key = cli::trim(t.substr(0, eq));
        std::vector<std::string> vals = cli::split_values(t.substr(eq + 1));
        if (key.empty())
            throw std::invalid_argument("line " + std::to_string(lineno) + ": empty key");
        if (vals.empty())
            throw std::invalid_argument("line " + std::to_string(lineno) + ": empty value for " +
                                        key);
        kv.assign(key, std::move(vals));
    }
    return kv;
}

struct SuiteRow
{
    SimConfig cfg; // cfg.rng_seed carries the row's seed
};

struct ExperimentSuite
{
    std::string name;
    std::string output_path = "results.csv";
    std::vector<SuiteRow> rows; // declared sweep order, seeds innermost
};

namespace cli
{

// Applies one parsed token to one config field. Returns false when the key is not a
// SimConfig field (caller handles the suite-level keys).
inline bool apply_config_key(SimConfig &c, const std::string &key, const std::string &tok)
{
    if (key == "N_b")
        c.N_b = static_cast<int>(parse_long(key, tok));
    else if (key == "N_m")
        c.N_m = static_cast<int>(parse_long(key, tok));
    else if (key == "M_b")
        c.M_b = static_cast<int>(parse_long(key, tok));
    else if (key == "M_m")
        c.M_m = static_cast<int>(parse_long(key, tok));
    else if (key == "L")
        c.L = static_cast<int>(parse_long(key, tok));
    else if (key == "N_c")
        c.N_c = static_cast<int>(parse_long(key, tok));
    else if (key == "N_d")
        c.N_d = static_cast<int>(parse_long(key, tok));
    else if (key == "T_c")
        c.T_c = static_cast<int>(parse_long(key, tok));
    else if (key == "T_d")
        c.T_d = static_cast<int>(parse_long(key, tok));
    else if (key == "total_symbols")
        c.total_symbols = parse_long(key, tok);
    else if (key == "snr_db")
        c.snr_db = parse_double(key, tok);
    else if (key == "beta")
        c.beta = parse_double(key, tok);
    else if (key == "rho")
        c.rho = parse_double(key, tok);
    else if (key == "gain_prior_var")
        c.gain_prior_var = parse_double(key, tok);
    else if (key == "mode")
    {
        if (!parse_mode(tok, c.mode))
            fail_key(key, "unknown mode");
    }
    else if (key == "oracle_combiner")
        c.oracle_combiner = parse_bool(key, tok);
    else if (key == "ar_per_period")
        c.ar_per_period = parse_bool(key, tok);
    else if (key == "psi_literal_last_term")
        c.psi_literal_last_term = parse_bool(key, tok);
    else
        return false;
    return true;
}

inline bool is_config_key(const std::string &key)
{
    SimConfig scratch;
    try
    {
        return apply_config_key(scratch, key, "0") || key == "mode";
    }
    catch (const std::invalid_argument &)
    {
        return true; // parse failed, but the key itself was recognised
    }
}

} // namespace cli

// Assembles the suite: merged key sources are the suite file, then the paper-scale
// preset, then command-line overrides (later wins). Multi-valued config keys become
// sweep axes in declaration order; seeds are the innermost axis. Every combination is
// validated here so an infeasible sweep fails before any simulation work.
inline ExperimentSuite
build_suite(const KeyValues &file_kv, const std::string &default_name,
            const std::vector<std::pair<std::string, std::string>> &overrides = {},
            bool paper_scale = false,
            const std::vector<std::uint64_t> &seed_list_override = {})
{
    KeyValues merged = file_kv;
    if (paper_scale)
    {
        merged.assign("N_b", {"32"});
        merged.assign("N_m", {"32"});
        merged.assign("M_b", {"128"});
        merged.assign("M_m", {"128"});
        merged.assign("total_symbols", {"1000000"});
    }
    for (const auto &ov : overrides)
    {
        std::vector<std::string> vals = cli::split_values(ov.second);
        if (vals.empty())
            cli::fail_key(ov.first, "empty value");
        merged.assign(ov.first, std::move(vals));
    }

    ExperimentSuite suite;
    suite.name = default_name;
    std::vector<std::uint64_t> seeds;

    // suite-level keys and key vetting; config axes keep declaration order
    std::vector<std::pair<std::string, std::vector<std::string>>> axes;
    for (const auto &kv : merged.items)
    {
        const std::string &key = kv.first;
        if (key == "suite")
        {
            if (kv.second.size() != 1)
                cli::fail_key(key, "expects one value");
            suite.name = kv.second[0];
        }
        else if (key == "out")
        {
            if (kv.second.size() != 1)
                cli::fail_key(key, "expects one value");
            suite.output_path = kv.second[0];
        }
        else if (key == "seeds")
        {
            seeds.clear();
            for (const std::string &tok : kv.second)
                seeds.push_back(cli::parse_seed(key, tok));
        }
        else if (key == "rng_seed")
            cli::fail_key(key, "use the seeds key or --seed-list instead of");
        else if (cli::is_config_key(key))
            axes.emplace_back(key, kv.second);
        else
            cli::fail_key(key, "unknown key");
    }
    if (!seed_list_override.empty())
        seeds = seed_list_override;
    if (seeds.empty())
        for (std::uint64_t s = 1; s <= 10; ++s)
            seeds.push_back(s);

    // Cartesian product, first axis outermost; validate here so nothing runs on a bad sweep
    std::vector<std::size_t> pick(axes.size(), 0);
    while (true)
    {
        SimConfig cfg;
        for (std::size_t a = 0; a < axes.size(); ++a)
            cli::apply_config_key(cfg, axes[a].first, axes[a].second[pick[a]]);
        validate_config(cfg);
        for (std::uint64_t s : seeds)
        {
            SuiteRow row;
            row.cfg = cfg;
            row.cfg.rng_seed = s;
            suite.rows.push_back(std::move(row));
        }
        std::size_t a = axes.size();
        while (a > 0)
        {
            --a;
            if (++pick[a] < axes[a].second.size())
                break;
            pick[a] = 0;
            if (a == 0)
                return suite;
        }
        if (axes.empty())
            return suite;
    }
}

struct RowResult
{
    bool ok = false;
    MetricsReport report;
    double runtime_s = 0.0;
    std::string error;
};

// Runs every row, up to `jobs` concurrently. Row order in the result vector is the
// declared order; each row's random stream depends only on its own seed, so results are
// independent of scheduling.
inline std::vector<RowResult> run_rows(const ExperimentSuite &suite, int jobs)
{
    require(jobs >= 1, "run_rows: jobs must be >= 1");
    std::vector<RowResult> results(suite.rows.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        while (true)
        {
            std::size_t i = next.fetch_add(1);
            if (i >= suite.rows.size())
                return;
            RowResult &r = results[i];
            auto t0 = std::chrono::steady_clock::now();
            try
            {
                r.report = run_scenario(suite.rows[i].cfg);
                r.ok = true;
            }
            catch (const std::exception &e)
            {
                r.error = e.what();
            }
            r.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                              .count();
        }
    };
    int n = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(jobs),
                                                   suite.rows.size()));
    if (n <= 1)
        worker();
    else
    {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(n));
        for (int t = 0; t < n; ++t)
            pool.emplace_back(worker);
        for (auto &t : pool)
            t.join();
    }
    return results;
}

namespace cli
{

// Error text must stay inside one unquoted CSV cell.
inline std::string sanitize_cell(std::string s)
{
    for (char &c : s)
        if (c == ',' || c == '\n' || c == '\r' || c == '"')
            c = c == ',' ? ';' : ' ';
    return s;
}

} // namespace cli

// One CSV body line (no newline). Conventional rows report the effective T_d = N_d = 0.
inline std::string csv_row(const std::string &suite_name, const SuiteRow &row,
                           const RowResult &res, bool stable_output)
{
    const SimConfig &c = row.cfg;
    const bool ded = c.mode != SimMode::ConventionalCycling;
    std::ostringstream out;
    out << cli::sanitize_cell(suite_name) << ',' << mode_name(c.mode) << ','
        << format_float(c.snr_db) << ',' << format_float(c.beta) << ',' << c.T_c << ','
        << (ded ? c.T_d : 0) << ',' << (ded ? c.N_d : 0) << ',';
    if (res.ok)
        out << format_float(res.report.overhead) << ',' << format_float(res.report.ber) << ','
            << format_float(res.report.nmse);
    else
        out << ",,";
    out << ',' << c.rng_seed << ',' << format_float(stable_output ? 0.0 : res.runtime_s) << ','
        << cli::sanitize_cell(res.error);
    return out.str();
}

inline void write_csv(std::ostream &out, const ExperimentSuite &suite,
                      const std::vector<RowResult> &results, bool stable_output)
{
    require(results.size() == suite.rows.size(), "write_csv: result count mismatch");
    out << csv_header << '\n';
    for (std::size_t i = 0; i < suite.rows.size(); ++i)
        out << csv_row(suite.name, suite.rows[i], results[i], stable_output) << '\n';
}

// Wall-clock sidecar: everything time-dependent stays out of the CSV body.
inline void write_meta(std::ostream &out, const ExperimentSuite &suite,
                       const std::vector<RowResult> &results, const std::string &started_at,
                       const std::string &finished_at)
{
    out << "suite = " << suite.name << '\n';
    out << "rows = " << results.size() << '\n';
    out << "started_at = " << started_at << '\n';
    out << "finished_at = " << finished_at << '\n';
    double total = 0.0;
    for (std::size_t i = 0; i < results.size(); ++i)
    {
        out << "row_runtime_s " << i << " = " << format_float(results[i].runtime_s) << '\n';
        total += results[i].runtime_s;
    }
    out << "total_runtime_s = " << format_float(total) << '\n';
}

// ---- summarize ----------------------------------------------------------------------

struct CsvRowData
{
    std::vector<std::string> cells;
};

// Reads a CSV produced by write_csv; throws on a missing or unexpected header.
inline std::vector<CsvRowData> read_csv(std::istream &in)
{
    std::string line;
    if (!std::getline(in, line))
        throw std::invalid_argument("csv: empty file");
    if (!line.empty() && line.back() == '\r')
        line.pop_back();
    if (line != csv_header)
        throw std::invalid_argument("csv: unexpected header");
    const std::size_t ncols = 13;
    std::vector<CsvRowData> rows;
    int lineno = 1;
    while (std::getline(in, line))
    {
        ++lineno;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty())
            continue;
        CsvRowData row;
        std::string cur;
        for (char ch : line)
        {
            if (ch == ',')
            {
                row.cells.push_back(cur);
                cur.clear();
            }
            else
                cur.push_back(ch);
        }
        row.cells.push_back(cur);
        if (row.cells.size() != ncols)
            throw std::invalid_argument("csv: line " + std::to_string(lineno) +
                                        " has wrong column count");
        rows.push_back(std::move(row));
    }
    return rows;
}

struct SummaryGroup
{
    // group identity: suite, mode, snr_db, beta, T_c, T_d, N_d
    std::vector<std::string> key;
    int n = 0;      // rows aggregated
    int failed = 0; // rows with a recorded error
    double ber_mean = 0, ber_std = 0;
    double nmse_mean = 0, nmse_std = 0;
    double overhead_mean = 0;
};

namespace cli
{

inline void mean_std(const std::vector<double> &v, double &mean, double &stdev)
{
    mean = 0.0;
    stdev = 0.0;
    if (v.empty())
        return;
    for (double x : v)
        mean += x;
    mean /= static_cast<double>(v.size());
    if (v.size() < 2)
        return;
    double acc = 0.0;
    for (double x : v)
        acc += (x - mean) * (x - mean);
    stdev = std::sqrt(acc / static_cast<double>(v.size() - 1)); // sample std, n-1
}

} // namespace cli

// Aggregates rows over seeds for each distinct configuration, in first-seen order.
inline std::vector<SummaryGroup> summarize_rows(const std::vector<CsvRowData> &rows)
{
    std::vector<SummaryGroup> groups;
    std::vector<std::vector<double>> bers, nmses, overheads;
    for (const CsvRowData &row : rows)
    {
        std::vector<std::string> key(row.cells.begin(), row.cells.begin() + 7);
        std::size_t g = 0;
        for (; g < groups.size(); ++g)
            if (groups[g].key == key)
                break;
        if (g == groups.size())
        {
            groups.push_back(SummaryGroup{key, 0, 0, 0, 0, 0, 0, 0});
            bers.emplace_back();
            nmses.emplace_back();
            overheads.emplace_back();
        }
        ++groups[g].n;
        if (!row.cells[12].empty())
        {
            ++groups[g].failed;
            continue;
        }
        bers[g].push_back(cli::parse_double("ber", row.cells[8]));
        nmses[g].push_back(cli::parse_double("nmse", row.cells[9]));
        overheads[g].push_back(cli::parse_double("overhead", row.cells[7]));
    }
    for (std::size_t g = 0; g < groups.size(); ++g)
    {
        cli::mean_std(bers[g], groups[g].ber_mean, groups[g].ber_std);
        cli::mean_std(nmses[g], groups[g].nmse_mean, groups[g].nmse_std);
        double dummy = 0.0;
        cli::mean_std(overheads[g], groups[g].overhead_mean, dummy);
    }
    return groups;
}

// Prints per-configuration aggregates. Exit code: 0 on clean data, 1 when the table has
// no data rows, 2 when any row recorded an error.
inline int summarize_stream(std::istream &in, std::ostream &out)
{
    std::vector<CsvRowData> rows;
    try
    {
        rows = read_csv(in);
    }
    catch (const std::exception &e)
    {
        out << e.what() << '\n';
        return 1;
    }
    if (rows.empty())
    {
        out << "no rows\n";
        return 1;
    }
    std::vector<SummaryGroup> groups = summarize_rows(rows);
    bool any_failed = false;
    for (const SummaryGroup &g : groups)
    {
        out << g.key[0] << " mode=" << g.key[1] << " snr_db=" << g.key[2] << " beta=" << g.key[3]
            << " T_c=" << g.key[4] << " T_d=" << g.key[5] << " N_d=" << g.key[6]
            << " n=" << g.n;
        if (g.n > g.failed)
            out << " overhead=" << format_float(g.overhead_mean) << " ber="
                << format_float(g.ber_mean) << "+-" << format_float(g.ber_std)
                << " nmse=" << format_float(g.nmse_mean) << "+-" << format_float(g.nmse_std);
        if (g.failed > 0)
        {
            out << " failed=" << g.failed;
            any_failed = true;
        }
        out << '\n';
    }
    return any_failed ? 2 : 0;
}

} // namespace beamtrain

#endif

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
// simulate - command-line driver for the beamtrain experiment suites.
//
//   simulate run --suite <file> [--jobs N] [--out results.csv] [--paper-scale]
//                [--seed-list 1,2,3] [--stable-output] [key=value ...]
//   simulate summarize --in results.csv
//
// Exit codes: 0 success, 1 validation or data error, 2 rows failed during the run (or
// a summarized CSV contains failed rows).
// ------------------------------------------------------------------------------------------------

#include "beamtrain/cli_experiments.hpp"

#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace
{

const char *usage_text =
    "usage:\n"
    "  simulate run --suite <file> [--jobs N] [--out results.csv] [--paper-scale]\n"
    "               [--seed-list 1,2,3] [--stable-output] [key=value ...]\n"
    "  simulate summarize --in results.csv\n"
    "\n"
    "run executes every row of the suite's sweep (config keys with several values form\n"
    "a Cartesian product, seeds innermost) and writes one CSV row per (config, seed),\n"
    "plus wall-clock data in <out>.meta. summarize prints per-configuration aggregates\n"
    "(mean +- sample std over seeds).\n"
    "\n"
    "exit codes: 0 success; 1 validation or data error; 2 some rows failed.\n";

std::string iso_now()
{
    std::time_t t = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

int cmd_run(int argc, char **argv)
{
    std::string suite_path, out_path;
    int jobs = 1;
    bool paper_scale = false, stable_output = false;
    std::vector<std::uint64_t> seed_list;
    std::vector<std::pair<std::string, std::string>> overrides;

    for (int i = 2; i < argc; ++i)
    {
        std::string arg = argv[i];
        auto next = [&](const char *flag) -> std::string {
            if (i + 1 >= argc)
                throw std::invalid_argument(std::string(flag) + " needs a value");
            return argv[++i];
        };
        if (arg == "--suite")
            suite_path = next("--suite");
        else if (arg == "--jobs")
            jobs = static_cast<int>(beamtrain::cli::parse_long("--jobs", next("--jobs")));
        else if (arg == "--out")
            out_path = next("--out");
        else if (arg == "--paper-scale")
            paper_scale = true;
        else if (arg == "--stable-output")
            stable_output = true;
        else if (arg == "--seed-list")
        {
            for (const std::string &tok : beamtrain::cli::split_values(next("--seed-list")))
                seed_list.push_back(beamtrain::cli::parse_seed("--seed-list", tok));
            if (seed_list.empty())
                throw std::invalid_argument("--seed-list is empty");
        }
        else if (arg.size() >= 2 && arg[0] == '-' && arg[1] == '-')
            throw std::invalid_argument("unknown flag: " + arg);
        else
        {
            std::size_t eq = arg.find('=');
            if (eq == std::string::npos || eq == 0)
                throw std::invalid_argument("expected key=value, got: " + arg);
            overrides.emplace_back(arg.substr(0, eq), arg.substr(eq + 1));
        }
    }
    if (suite_path.empty())
        throw std::invalid_argument("run needs --suite <file>");
    if (jobs < 1)
        throw std::invalid_argument("--jobs must be >= 1");

    std::ifstream in(suite_path);
    if (!in)
        throw std::invalid_argument("cannot open suite file: " + suite_path);
    beamtrain::KeyValues kv = beamtrain::parse_key_value_text(in);
    std::string default_name = std::filesystem::path(suite_path).stem().string();
    beamtrain::ExperimentSuite suite =
        beamtrain::build_suite(kv, default_name, overrides, paper_scale, seed_list);
    if (!out_path.empty())
        suite.output_path = out_path;

    std::string started = iso_now();
    std::vector<beamtrain::RowResult> results = beamtrain::run_rows(suite, jobs);
    std::string finished = iso_now();

    {
        std::ofstream csv(suite.output_path, std::ios::binary);
        if (!csv)
            throw std::invalid_argument("cannot write: " + suite.output_path);
        beamtrain::write_csv(csv, suite, results, stable_output);
    }
    {
        std::ofstream meta(suite.output_path + ".meta", std::ios::binary);
        if (meta)
            beamtrain::write_meta(meta, suite, results, started, finished);
    }

    int failed = 0;
    for (const auto &r : results)
        failed += r.ok ? 0 : 1;
    std::cout << "suite " << suite.name << ": " << results.size() << " rows, " << failed
              << " failed, wrote " << suite.output_path << "\n";
    {
        std::ifstream csv(suite.output_path, std::ios::binary);
        beamtrain::summarize_stream(csv, std::cout);
    }
    return failed > 0 ? 2 : 0;
}

int cmd_summarize(int argc, char **argv)
{
    std::string in_path;
    for (int i = 2; i < argc; ++i)
    {
        std::string arg = argv[i];
        if (arg == "--in")
        {
            if (i + 1 >= argc)
                throw std::invalid_argument("--in needs a value");
            in_path = argv[++i];
        }
        else
            throw std::invalid_argument("unknown flag: " + arg);
    }
    if (in_path.empty())
        throw std::invalid_argument("summarize needs --in <csv>");
    std::ifstream in(in_path, std::ios::binary);
    if (!in)
        throw std::invalid_argument("cannot open: " + in_path);
    return beamtrain::summarize_stream(in, std::cout);
}

} // namespace

int main(int argc, char **argv)
{
    try
    {
        if (argc < 2)
        {
            std::cerr << usage_text;
            return 1;
        }
        std::string cmd = argv[1];
        if (cmd == "--help" || cmd == "-h" || cmd == "help")
        {
            std::cout << usage_text;
            return 0;
        }
        if (cmd == "run")
            return cmd_run(argc, argv);
        if (cmd == "summarize")
            return cmd_summarize(argc, argv);
        std::cerr << "unknown command: " << cmd << "\n" << usage_text;
        return 1;
    }
    catch (const std::exception &e)
    {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

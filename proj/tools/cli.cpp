#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <iterator>
#include <limits>
#include <sstream>

#include <CLI11.hpp>

#include "irtforge/error.hpp"

namespace irtforge::cli {

namespace {

constexpr double kThetaMin = -4.0;
constexpr double kThetaMax = 4.0;

std::uint64_t time_seed() {
  return static_cast<std::uint64_t>(std::chrono::system_clock::now().time_since_epoch().count());
}

std::string format_double(double v, const char* fmt = "%.17g") {
  char buffer[64];
  std::snprintf(buffer, sizeof buffer, fmt, v);
  return buffer;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory '" + path.parent_path().string() + "': " + ec.message());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out.flush()) throw IoError("failed writing '" + path.string() + "'");
}

double theta_at(std::size_t k, std::size_t points) {
  return kThetaMin + (kThetaMax - kThetaMin) * static_cast<double>(k) / static_cast<double>(points - 1);
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

// Maps known exceptions onto the exit-code taxonomy.
template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const NotFoundError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const TrainingError& e) {
    err << "error: training diverged: " << e.what() << '\n';
    return kDiverged;
  } catch (const FormatError& e) {
    err << "error: invalid input: " << e.what() << '\n';
    return kInputError;
  } catch (const DomainError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Library-level pieces

TrainConfig svi_config(const ModelRegistration& registration, const TrainOptions& options, std::uint64_t seed) {
  TrainConfig config;
  config.kind = registration.family;
  config.priors = registration.priors;
  if (options.no_hier) config.priors.hierarchical = false;
  config.epochs = options.epochs;
  config.batch_size = options.batch_size;
  config.optimizer.learning_rate = options.learning_rate;
  config.mc_samples = options.mc_samples;
  config.seed = seed;
  return config;
}

MmlConfig mml_config(const TrainOptions& options) {
  MmlConfig config;
  config.quad_points = options.quad_points;
  config.max_iters = options.max_iters;
  return config;
}

FitReport train(const ResponsePatternDataset& dataset, const ModelRegistration& registration,
                const TrainOptions& options, std::uint64_t seed) {
  if (options.estimator == Estimator::Mml) return fit_mml(dataset, registration.family, mml_config(options));
  return fit_svi(dataset, svi_config(registration, options, seed)).report;
}

std::filesystem::path truth_path_for(const std::filesystem::path& dataset_path) {
  std::filesystem::path truth = dataset_path;
  truth.replace_filename(dataset_path.stem().string() + ".truth.json");
  return truth;
}

std::string render_icc_csv(const ModelRegistration& model, const ParametersDocument& doc,
                           const std::vector<std::size_t>& items, std::size_t points) {
  const ItemParams params = item_params_of(doc, model.family);
  std::string out = "item_id,theta,p\n";
  for (std::size_t i : items) {
    const ItemPoint point = params.at(i);
    for (std::size_t k = 0; k < points; ++k) {
      const double theta = theta_at(k, points);
      out += doc.item_ids[i] + "," + format_double(theta, "%.6g") + "," + format_double(model.icc(theta, point)) + "\n";
    }
  }
  return out;
}

std::string render_icc_svg(const ModelRegistration& model, const ParametersDocument& doc,
                           const std::vector<std::size_t>& items, std::size_t points) {
  const ItemParams params = item_params_of(doc, model.family);
  constexpr double width = 640, height = 420, left = 60, right = 150, top = 20, bottom = 50;
  const double plot_w = width - left - right;
  const double plot_h = height - top - bottom;
  auto px = [&](double theta) { return left + (theta - kThetaMin) / (kThetaMax - kThetaMin) * plot_w; };
  auto py = [&](double p) { return top + (1.0 - p) * plot_h; };
  static constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  static constexpr const char* kDashes[] = {"", "6,4", "2,3", "8,3,2,3"};

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << plot_w << "\" height=\"" << plot_h
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int t = -4; t <= 4; ++t) {
    svg << "<line x1=\"" << px(t) << "\" y1=\"" << top + plot_h << "\" x2=\"" << px(t) << "\" y2=\""
        << top + plot_h + 5 << "\" stroke=\"black\"/>";
    svg << "<text x=\"" << px(t) << "\" y=\"" << top + plot_h + 18 << "\" text-anchor=\"middle\">" << t
        << "</text>\n";
  }
  for (int k = 0; k <= 4; ++k) {
    const double p = k / 4.0;
    svg << "<line x1=\"" << left - 5 << "\" y1=\"" << py(p) << "\" x2=\"" << left << "\" y2=\"" << py(p)
        << "\" stroke=\"black\"/>";
    svg << "<text x=\"" << left - 8 << "\" y=\"" << py(p) + 4 << "\" text-anchor=\"end\">" << p << "</text>\n";
  }
  svg << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << height - 10 << "\" text-anchor=\"middle\">theta</text>\n";
  svg << "<text x=\"15\" y=\"" << top + plot_h / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 15 "
      << top + plot_h / 2 << ")\">p(correct)</text>\n";

  for (std::size_t n = 0; n < items.size(); ++n) {
    const std::size_t i = items[n];
    const ItemPoint point = params.at(i);
    const char* color = kColors[n % std::size(kColors)];
    const char* dash = kDashes[n % std::size(kDashes)];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\"";
    if (*dash) svg << " stroke-dasharray=\"" << dash << "\"";
    svg << " points=\"";
    for (std::size_t k = 0; k < points; ++k) {
      const double theta = theta_at(k, points);
      svg << (k ? " " : "") << format_double(px(theta), "%.2f") << "," << format_double(py(model.icc(theta, point)), "%.2f");
    }
    svg << "\"/>\n";
    const double ly = top + 15 + 18 * static_cast<double>(n);
    svg << "<line x1=\"" << width - right + 10 << "\" y1=\"" << ly << "\" x2=\"" << width - right + 35 << "\" y2=\""
        << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"";
    if (*dash) svg << " stroke-dasharray=\"" << dash << "\"";
    svg << "/><text x=\"" << width - right + 40 << "\" y=\"" << ly + 4 << "\">" << xml_escape(doc.item_ids[i])
        << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_train(const TrainOptions& options, const ModelRegistry& registry, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ModelRegistration& registration = registry.lookup(options.model);
    const std::uint64_t seed = options.seed.value_or(time_seed());
    if (!options.seed) out << "seed: " << seed << '\n';

    const ResponsePatternDataset dataset = read_jsonlines(options.data);
    out << "loaded " << dataset.subject_count() << " subjects, " << dataset.item_count() << " items, "
        << dataset.observation_count() << " responses\n";

    TrainOptions effective = options;
    FitReport report;
    if (options.estimator == Estimator::Mml) {
      MmlConfig config = mml_config(options);
      if (options.verbose)
        config.on_iteration = [&](const EpochRecord& r) {
          out << "iter " << r.epoch << " loss " << format_double(r.loss, "%.6f") << '\n';
        };
      report = fit_mml(dataset, registration.family, config);
    } else {
      TrainConfig config = svi_config(registration, effective, seed);
      if (options.verbose)
        config.on_epoch = [&](const EpochRecord& r) {
          out << "epoch " << r.epoch << " loss " << format_double(r.loss, "%.6f") << '\n';
        };
      report = fit_svi(dataset, config).report;
    }

    const ParametersDocument doc = make_parameters_document(registration.name, report, dataset, seed);
    const auto params_path = write_parameters(doc, options.out_dir);
    write_training_log(report.trace, options.out_dir / kTrainingLogFileName);

    out << "final loss: " << format_double(report.final_loss(), "%.6f") << '\n';
    out << "seconds: " << format_double(report.seconds, "%.3f") << '\n';
    out << "converged: " << (report.converged ? "yes" : "no") << '\n';
    if (!report.flagged_items.empty())
      out << "flagged items (all responses identical): " << report.flagged_items.size() << '\n';
    out << "wrote " << params_path.string() << '\n';
    return static_cast<int>(kOk);
  });
}

int cmd_simulate(const SimulateOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    SimulationSpec spec;
    try {
      spec.kind = parse_model_kind(options.kind);
    } catch (const FormatError& e) {
      err << "error: " << e.what() << '\n';
      return static_cast<int>(kUsage);
    }
    spec.subjects = options.subjects;
    spec.items = options.items;
    spec.missing_rate = options.missing;
    spec.fixed_guessing = options.guessing;
    spec.seed = options.seed;
    const SimulationResult sim = simulate(spec);

    if (options.out.has_parent_path()) std::filesystem::create_directories(options.out.parent_path());
    write_jsonlines(sim.dataset, options.out);
    const auto truth = truth_path_for(options.out);
    write_text(truth, to_json_text(make_truth_document(std::string(to_string(spec.kind)), sim.items, sim.abilities,
                                                       sim.dataset, spec.seed)));
    out << "wrote " << options.out.string() << " (" << sim.dataset.observation_count() << " responses) and "
        << truth.string() << '\n';
    return static_cast<int>(kOk);
  });
}

int cmd_bench(const BenchOptions& options, const ModelRegistry& registry, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ModelRegistration& registration = registry.lookup(options.model);
    if (options.items.empty() || options.subjects.empty()) {
      err << "error: bench grid is empty\n";
      return static_cast<int>(kUsage);
    }

    std::ostringstream csv;
    csv << "items,subjects,seconds,final_loss,status\n";
    for (std::size_t n_items : options.items) {
      for (std::size_t n_subjects : options.subjects) {
        std::string status = "ok";
        double seconds = 0.0;
        double loss = std::numeric_limits<double>::quiet_NaN();
        try {
          SimulationSpec spec;
          spec.kind = registration.family;
          spec.items = n_items;
          spec.subjects = n_subjects;
          spec.seed = options.seed;
          const SimulationResult sim = simulate(spec);

          FitReport report;
          if (options.estimator == Estimator::Mml) {
            MmlConfig config;
            config.max_iters = options.epochs;
            config.tolerance = 0.0;
            report = fit_mml(sim.dataset, registration.family, config);
          } else {
            TrainOptions train_options;
            train_options.epochs = options.epochs;
            train_options.batch_size = options.batch_size;
            TrainConfig config = svi_config(registration, train_options, options.seed);
            config.convergence_tolerance = 0.0;
            report = fit_svi(sim.dataset, config).report;
          }
          seconds = report.seconds;
          loss = report.final_loss();
          if (!std::isfinite(loss)) status = "non-finite loss";
        } catch (const std::exception& e) {
          status = std::string("error: ") + e.what();
          for (char& ch : status)
            if (ch == ',' || ch == '\n') ch = ';';
        }
        csv << n_items << ',' << n_subjects << ',' << format_double(seconds, "%.3f") << ','
            << format_double(loss) << ',' << status << '\n';
        if (options.out) err << "bench " << n_items << "x" << n_subjects << ": " << status << '\n';
      }
    }

    if (options.out) {
      write_text(*options.out, csv.str());
      out << "wrote " << options.out->string() << '\n';
    } else {
      out << csv.str();
    }
    return static_cast<int>(kOk);
  });
}

int cmd_plot_icc(const PlotOptions& options, const ModelRegistry& registry, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ParametersDocument doc = read_parameters(options.params);
    const ModelRegistration model = registry.contains(doc.model)
                                        ? registry.lookup(doc.model)
                                        : builtin_registration(infer_kind(doc), doc.model);

    std::vector<std::size_t> items;
    if (options.items.empty()) {
      for (std::size_t i = 0; i < doc.item_ids.size(); ++i) items.push_back(i);
    } else {
      for (const std::string& id : options.items) {
        const auto it = std::find(doc.item_ids.begin(), doc.item_ids.end(), id);
        if (it == doc.item_ids.end()) {
          err << "error: unknown item id '" << id << "'\n";
          return static_cast<int>(kUsage);
        }
        items.push_back(static_cast<std::size_t>(it - doc.item_ids.begin()));
      }
    }

    const std::string text = options.csv ? render_icc_csv(model, doc, items, options.points)
                                         : render_icc_svg(model, doc, items, options.points);
    write_text(options.out, text);
    out << "wrote " << options.out.string() << '\n';
    return static_cast<int>(kOk);
  });
}

// ---------------------------------------------------------------------------
// Argument parsing

int run(int argc, const char* const* argv, const ModelRegistry& registry, std::ostream& out, std::ostream& err) {
  CLI::App app{"irt-forge: item response theory models by variational inference or marginal maximum likelihood"};
  app.require_subcommand(1);

  const std::vector<std::string> estimators{"svi", "mml"};
  std::string train_estimator = "svi";
  std::string bench_estimator = "svi";

  TrainOptions train_opts;
  std::uint64_t train_seed = 0;
  auto* train = app.add_subcommand("train", "Fit a registered model to a jsonlines response file");
  train->add_option("model", train_opts.model, "Registered model name (e.g. 1pl)")->required();
  train->add_option("data", train_opts.data, "Response data (jsonlines)")->required();
  train->add_option("outdir", train_opts.out_dir, "Output directory")->required();
  train->add_option("--estimator", train_estimator, "svi or mml")
      ->transform(CLI::IsMember(estimators, CLI::ignore_case))
      ->capture_default_str();
  train->add_option("--epochs", train_opts.epochs, "SVI epoch budget")->check(CLI::PositiveNumber)->capture_default_str();
  train->add_option("--lr", train_opts.learning_rate, "Adam learning rate")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  train->add_option("--batch-size", train_opts.batch_size, "Observations per SVI step")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  auto* seed_opt = train->add_option("--seed", train_seed, "Random seed (time-derived and printed when omitted)");
  train->add_option("--quad-points", train_opts.quad_points, "Quadrature nodes for MML")
      ->check(CLI::Range(3, 400))
      ->capture_default_str();
  train->add_option("--max-iters", train_opts.max_iters, "EM iteration budget for MML")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  train->add_option("--mc-samples", train_opts.mc_samples, "Monte Carlo samples per ELBO estimate")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  train->add_flag("--no-hier", train_opts.no_hier, "Fixed Normal(0,1) ability prior instead of the hierarchical one");
  train->add_flag("--verbose", train_opts.verbose, "Print the loss every epoch");

  SimulateOptions sim_opts;
  double sim_guess = -1.0;
  auto* sim = app.add_subcommand("simulate", "Write a synthetic jsonlines dataset and its generating parameters");
  sim->add_option("out", sim_opts.out, "Output jsonlines path")->required();
  sim->add_option("--kind", sim_opts.kind, "1pl, 2pl, 3pl or 4pl")->capture_default_str();
  sim->add_option("--subjects", sim_opts.subjects, "Number of subjects")->check(CLI::PositiveNumber)->capture_default_str();
  sim->add_option("--items", sim_opts.items, "Number of items")->check(CLI::PositiveNumber)->capture_default_str();
  sim->add_option("--missing", sim_opts.missing, "Fraction of cells left unobserved, in [0, 1)")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  auto* guess_opt = sim->add_option("--guessing", sim_guess, "Fixed guessing for 3pl (default: Uniform(0, 0.3))")
                        ->check(CLI::Range(0.0, 1.0));
  sim->add_option("--seed", sim_opts.seed, "Random seed")->capture_default_str();

  BenchOptions bench_opts;
  auto* bench = app.add_subcommand("bench", "Time fits over a grid of simulated dataset sizes");
  bench->add_option("--items", bench_opts.items, "Item counts")->delimiter(',')->check(CLI::PositiveNumber);
  bench->add_option("--subjects", bench_opts.subjects, "Subject counts")->delimiter(',')->check(CLI::PositiveNumber);
  bench->add_option("--model", bench_opts.model, "Registered model name")->capture_default_str();
  bench->add_option("--estimator", bench_estimator, "svi or mml")
      ->transform(CLI::IsMember(estimators, CLI::ignore_case));
  bench->add_option("--epochs", bench_opts.epochs, "Fixed epochs (EM iterations for mml)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  bench->add_option("--batch-size", bench_opts.batch_size, "Observations per SVI step")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  bench->add_option("--seed", bench_opts.seed, "Random seed")->capture_default_str();
  std::filesystem::path bench_out;
  auto* bench_out_opt = bench->add_option("--out", bench_out, "CSV output path (default: stdout)");

  PlotOptions plot_opts;
  auto* plot = app.add_subcommand("plot-icc", "Render item characteristic curves from a parameters file");
  plot->add_option("params", plot_opts.params, "best_parameters.json")->required();
  plot->add_option("out", plot_opts.out, "Output .svg (or .csv with --csv)")->required();
  plot->add_option("--items", plot_opts.items, "Item ids to draw (default: all)")->delimiter(',');
  plot->add_flag("--csv", plot_opts.csv, "Write a theta/probability table instead of SVG");
  plot->add_option("--points", plot_opts.points, "Grid points over theta in [-4, 4]")
      ->check(CLI::Range(2, 100000))
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }

  if (*train) {
    if (*seed_opt) train_opts.seed = train_seed;
    train_opts.estimator = parse_estimator(train_estimator);
    return cmd_train(train_opts, registry, out, err);
  }
  if (*sim) {
    if (*guess_opt) sim_opts.guessing = sim_guess;
    if (!(sim_opts.missing < 1.0)) {
      err << "error: --missing must be below 1\n";
      return kUsage;
    }
    return cmd_simulate(sim_opts, out, err);
  }
  if (*bench) {
    if (*bench_out_opt) bench_opts.out = bench_out;
    bench_opts.estimator = parse_estimator(bench_estimator);
    return cmd_bench(bench_opts, registry, out, err);
  }
  if (*plot) return cmd_plot_icc(plot_opts, registry, out, err);
  return kUsage;
}

}  // namespace irtforge::cli

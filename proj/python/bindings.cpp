#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <limits>

#include "workbench/balance.hpp"
#include "workbench/config.hpp"
#include "workbench/dedup.hpp"
#include "workbench/error.hpp"
#include "workbench/gan.hpp"
#include "workbench/glyphs.hpp"
#include "workbench/manifest.hpp"
#include "workbench/pipeline.hpp"
#include "workbench/triage.hpp"

namespace py = pybind11;
using namespace wb;

namespace {

py::dict record_dict(const SampleRecord& r, const DatasetManifest& m) {
  py::dict d;
  d["id"] = r.id;
  d["image_path"] = r.image_path;
  d["label"] = m.class_name(r.label);
  d["split"] = to_string(r.split);
  d["status"] = to_string(r.status);
  d["version"] = r.version;
  d["round"] = r.round ? py::object(py::int_(*r.round)) : py::none();
  d["loss"] = r.loss ? py::object(py::float_(*r.loss)) : py::none();
  d["flag"] = r.flag ? py::object(py::str(to_string(*r.flag))) : py::none();
  d["provenance"] = r.provenance ? py::object(py::str(*r.provenance)) : py::none();
  return d;
}

nn::Tensor class_probs(const std::vector<std::vector<double>>& rows) {
  const int n = static_cast<int>(rows.size());
  const int c = n ? static_cast<int>(rows[0].size()) : 0;
  nn::Tensor t({n, c});
  for (int i = 0; i < n; ++i) {
    if (static_cast<int>(rows[i].size()) != c) throw ValidationError("ragged class probabilities");
    for (int j = 0; j < c; ++j) t[static_cast<std::size_t>(i) * c + j] = rows[i][j];
  }
  return t;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Dataset curation workbench core";

  auto base = py::register_exception<Error>(m, "WorkbenchError", PyExc_RuntimeError);
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<InvariantError>(m, "InvariantError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<BudgetError>(m, "BudgetError", base.ptr());
  py::register_exception<ConflictError>(m, "ConflictError", base.ptr());
  py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<NotFoundError>(m, "NotFoundError", base.ptr());

  py::class_<DatasetManifest>(m, "Manifest")
      .def(py::init([](std::vector<std::string> classes, long n_max) {
             DatasetManifest d;
             d.classes = std::move(classes);
             d.n_max = n_max;
             return d;
           }),
           py::arg("classes"), py::arg("n_max") = 10000)
      .def_readonly("n_max", &DatasetManifest::n_max)
      .def_readonly("classes", &DatasetManifest::classes)
      .def("__len__", [](const DatasetManifest& d) { return d.records.size(); })
      .def("__contains__", &DatasetManifest::contains)
      .def("ids", [](const DatasetManifest& d) {
        std::vector<std::string> out;
        for (const auto& [id, _] : d.records) out.push_back(id);
        return out;
      })
      .def("record", [](const DatasetManifest& d, const std::string& id) { return record_dict(d.at(id), d); })
      .def("add", [](DatasetManifest& d, const std::string& id, const std::string& image_path,
                     const std::string& label) {
             SampleRecord r;
             r.id = id;
             r.image_path = image_path;
             r.label = d.class_index(label);
             d.add(std::move(r));
           },
           py::arg("id"), py::arg("image_path"), py::arg("label"))
      .def("histogram", [](const DatasetManifest& d, const std::string& split) {
             return class_histogram(d, parse_split(split));
           },
           py::arg("split") = "train")
      .def("size_constraint", [](const DatasetManifest& d) {
        const auto r = validate_size_constraint(d);
        py::dict out;
        out["train"] = r.train;
        out["validation"] = r.validation;
        out["n_max"] = r.n_max;
        out["satisfied"] = r.satisfied;
        return out;
      })
      .def("check_invariants", [](const DatasetManifest& d) { check_invariants(d); })
      .def("ratio_validated", [](const DatasetManifest& d) { return triage::ratio_validated(d); })
      .def("serialize", &serialize_manifest)
      .def("save", [](const DatasetManifest& d, const std::filesystem::path& p) { save_manifest(d, p); })
      .def("__eq__", [](const DatasetManifest& a, const DatasetManifest& b) { return a == b; });

  m.def("load_manifest", &load_manifest, py::arg("path"));
  m.def("parse_manifest", &parse_manifest, py::arg("text"));
  m.def("roman_numeral_classes", &roman_numeral_classes);

  m.def("hash_manifest", [](DatasetManifest& d, const std::filesystem::path& root) {
        std::vector<std::pair<std::string, std::string>> out;
        for (const auto& f : dedup::hash_manifest(d, root, {})) out.emplace_back(f.id, f.message);
        return out;
      },
      py::arg("manifest"), py::arg("image_root"),
      "Fills the content hashes in place; returns (id, message) for undecodable images.");
  m.def("find_duplicates", [](const DatasetManifest& d, int threshold) {
        dedup::DedupConfig cfg;
        cfg.hamming_threshold = threshold;
        py::list out;
        for (const auto& g : dedup::find_duplicates(d, cfg)) {
          py::dict item;
          item["kind"] = dedup::to_string(g.kind);
          item["ids"] = g.member_ids;
          item["distance"] = g.distance;
          out.append(item);
        }
        return out;
      },
      py::arg("manifest"), py::arg("threshold") = 6);
  m.def("hamming", &dedup::hamming);

  m.def("rank_by_loss", [](const std::vector<std::pair<std::string, double>>& losses) {
        aux::LossReport r;
        for (const auto& [id, loss] : losses) {
          aux::LossEntry e;
          e.id = id;
          e.loss = loss;
          r.entries.push_back(e);
        }
        return triage::rank_by_loss(r);
      },
      py::arg("losses"));
  m.def("select_head_tail", [](const std::vector<std::string>& order, int k, int l) {
        triage::TriageConfig c;
        c.k = k;
        c.l = l;
        const auto s = triage::select_head_tail(order, c);
        return std::make_pair(s.head, s.tail);
      },
      py::arg("order"), py::arg("k"), py::arg("l"));

  m.def("generator_loss", [](const std::vector<double>& disc, const std::vector<std::vector<double>>& cls,
                             const std::vector<int>& labels, double gamma, double delta) {
        return gan::generator_loss(disc, class_probs(cls), labels, gamma, delta);
      },
      py::arg("disc_probs"), py::arg("class_probs"), py::arg("labels"), py::arg("gamma"),
      py::arg("delta") = 1.0);
  m.def("discriminator_loss", [](const std::vector<double>& real, const std::vector<double>& fake) {
        return gan::discriminator_loss(real, fake);
      },
      py::arg("real_probs"), py::arg("fake_probs"));
  m.def("gamma_schedule", [](long iteration, long max_iterations, double gamma_max, std::optional<long> ramp) {
        gan::GanTrainConfig c;
        c.max_iterations = max_iterations;
        c.gamma_max = gamma_max;
        c.gamma_ramp_iterations = ramp;
        c.validate();
        return gan::gamma_schedule(iteration, c);
      },
      py::arg("iteration"), py::arg("max_iterations"), py::arg("gamma_max") = 0.5,
      py::arg("ramp") = py::none());
  m.def("sample_noise", [](int count, int dim, std::optional<double> truncation, std::uint64_t seed) {
        gan::SamplerConfig s;
        s.count = count;
        s.truncation = truncation.value_or(std::numeric_limits<double>::infinity());
        Rng rng(seed);
        const auto z = gan::sample_noise(s, dim, rng);
        return std::vector<double>(z.values().begin(), z.values().end());
      },
      py::arg("count"), py::arg("dim"), py::arg("truncation") = 0.7, py::arg("seed") = 0);

  m.def("balance_classes", [](DatasetManifest d, std::uint64_t seed) {
        Rng rng(seed);
        return balance::balance_classes(std::move(d), rng);
      },
      py::arg("manifest"), py::arg("seed") = 0);
  m.def("make_folds", [](const DatasetManifest& d, int n_folds, std::uint64_t seed) {
        return balance::make_folds(d, n_folds, seed).assignments;
      },
      py::arg("manifest"), py::arg("n_folds") = 8, py::arg("seed") = 0);

  m.def("generate_glyph_corpus", [](const std::filesystem::path& root, int per_class, double flip,
                                    std::uint64_t seed) {
        glyphs::CorpusSpec spec;
        spec.per_class = per_class;
        spec.flip_fraction = flip;
        spec.seed = seed;
        auto c = glyphs::generate_corpus(spec, root);
        std::map<std::string, std::string> truth;
        for (const auto& [id, label] : c.truth) truth[id] = c.manifest.class_name(label);
        return py::make_tuple(std::move(c.manifest), truth, c.flipped);
      },
      py::arg("root"), py::arg("per_class"), py::arg("flip_fraction") = 0.0, py::arg("seed") = 0);

  m.def("run_pipeline", [](const std::filesystem::path& config_path, std::optional<double> target,
                           std::function<void(const std::string&)> log) {
        const auto config = load_pipeline_config(config_path);
        pipeline::RunSummary s;
        {
          py::gil_scoped_release release;
          pipeline::Logger logger;
          if (log) logger = [&](const std::string& line) {
            py::gil_scoped_acquire acquire;
            log(line);
          };
          s = pipeline::run_until_validated(config, target.value_or(config.target_ratio), logger);
        }
        py::dict out;
        out["rounds_run"] = s.rounds_run;
        out["paused"] = s.paused;
        out["halted"] = s.halted;
        out["ratio_validated"] = s.ratio_validated;
        out["message"] = s.message;
        py::list rounds;
        for (const auto& e : s.ledger) {
          py::dict r;
          r["round"] = e.report.round;
          r["train_accuracy"] = e.report.train_accuracy;
          r["validation_accuracy"] = e.report.validation_accuracy;
          r["pipeline_accuracy"] = e.report.pipeline_accuracy;
          r["ratio_validated"] = e.report.ratio_validated;
          rounds.append(r);
        }
        out["ledger"] = rounds;
        return out;
      },
      py::arg("config"), py::arg("target") = py::none(), py::arg("log") = py::none());
}

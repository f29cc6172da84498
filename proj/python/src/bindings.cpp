#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "itx/job_pipeline.hpp"
#include "itx/scenario.hpp"

namespace py = pybind11;
using namespace itx;

namespace {

Bytes to_bytes(const py::bytes& b) {
  std::string s = b;
  return Bytes(s.begin(), s.end());
}

py::bytes from_bytes(ByteView b) { return py::bytes(reinterpret_cast<const char*>(b.data()), b.size()); }

template <std::size_t N>
ByteArray<N> to_array(const py::bytes& b, const char* what) {
  Bytes raw = to_bytes(b);
  if (raw.size() != N) throw Error(Errc::InvalidLength, std::string(what) + " must be " + std::to_string(N) + " bytes");
  ByteArray<N> out{};
  std::copy(raw.begin(), raw.end(), out.begin());
  return out;
}

py::dict result_dict(const RunResult& r) {
  py::dict d;
  d["completed"] = r.completed;
  d["killed"] = r.killed;
  d["abort_code"] = r.abort_code ? py::object(py::str(to_string(*r.abort_code))) : py::object(py::none());
  d["abort_reason"] = r.abort_reason;
  d["rejected"] = r.rejected ? py::object(py::str(to_string(*r.rejected))) : py::object(py::none());
  d["has_model"] = r.model.has_value();
  py::list ck;
  for (const auto& c : r.checkpoints) ck.append(from_bytes(c.encode()));
  d["checkpoints"] = ck;
  d["released_to"] = [&] {
    py::list l;
    for (const auto& [p, w] : r.released_model_keys) l.append(p);
    return l;
  }();
  return d;
}

// A scenario plus the last result, so Python sees plain dicts and bytes.
class PyScenario {
 public:
  PyScenario(std::uint64_t seed, bool hardened, std::optional<std::string> job_json,
             std::optional<std::string> device_json) {
    ScenarioOptions o;
    o.seed = seed;
    o.hardened_boot = hardened;
    if (job_json) o.job = JobDescription::from_json(*job_json);
    if (device_json) o.device = DeviceConfig::from_json(*device_json);
    sc_ = std::make_unique<Scenario>(o);
  }

  py::dict run_trusted(std::optional<std::uint32_t> kill_after, std::optional<std::string> adversary,
                       std::optional<py::bytes> checkpoint) {
    RunOptions o;
    o.stop_after_checkpoints = kill_after;
    if (adversary) o.adversary = AdversaryScript::from_json(*adversary);
    std::optional<CheckpointSet> ck;
    if (checkpoint) ck = CheckpointSet::decode(to_bytes(*checkpoint));
    EventLog log;
    last_ = sc_->run_trusted(o, &log, ck);
    last_normal_ = false;
    log_ = log;
    return result_dict(last_);
  }

  py::dict run_normal() {
    EventLog log;
    last_ = sc_->run_normal({}, &log);
    last_normal_ = true;
    log_ = log;
    return result_dict(last_);
  }

  std::optional<py::bytes> model() const {
    if (!last_.model) return std::nullopt;
    if (last_normal_) return from_bytes(sc_->clear_model_of(last_));
    auto m = sc_->model_of(last_);
    if (!m) return std::nullopt;
    return from_bytes(*m);
  }

  py::dict verify_last(std::uint32_t epoch, std::uint32_t ckpt, bool with_tcb) const {
    AttestationEvidence ev{last_.report, sc_->evidence.device_chain, sc_->evidence.ca_cik_certificate,
                           sc_->evidence.pik_endorsement};
    std::vector<Certificate> certs;
    for (const auto& p : sc_->job.manifest.parties) certs.push_back(sc_->identities.at(p).certificate);
    auto x = expected_run(sc_->job.manifest, certs, epoch, ckpt, sc_->policy);
    auto v = verify_attestation(ev, sc_->policy.anchors, sc_->policy.cas,
                                with_tcb ? sc_->policy.tcb_updates : std::vector<TcbUpdateCertificate>{}, x);
    py::dict d;
    d["accept"] = v.accept;
    d["reason"] = v.reason ? py::object(py::str(to_string(*v.reason))) : py::object(py::none());
    d["detail"] = v.detail;
    return d;
  }

  void update_sbl(const py::bytes& image, bool issue_tcb) {
    const auto old = sc_->firmware.sbl_measurement();
    sc_->update_secondary_bootloader(to_bytes(image));
    if (issue_tcb) {
      sc_->policy.tcb_updates.push_back(sc_->manufacturer.issue_tcb_update(
          FirmwareComponent::SecondaryBootloader, old, sc_->firmware.sbl_measurement(), false));
    }
  }

  std::string random_schedule(std::uint64_t seed) const {
    return itx::random_schedule(sc_->trusted_inputs(), seed).to_json();
  }

  Scenario& get() { return *sc_; }
  const EventLog& log() const { return log_; }

 private:
  std::unique_ptr<Scenario> sc_;
  RunResult last_;
  bool last_normal_ = false;
  EventLog log_;
};

py::dict dice_boot(std::uint64_t seed, const py::bytes& sbl, const py::bytes& cce, bool hardened) {
  Bytes s;
  put_be64(s, seed);
  Manufacturer mfr(crypto::kdf(s, "manufacturer"));
  // Same device for every call with this seed.
  Board board(DeviceConfig{}, 0, mfr.provision(1, "py"), [seed](std::span<std::uint8_t> out) {
    Bytes k;
    put_be64(k, seed);
    auto v = crypto::kdf(k, "uds");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i % v.size()];
  });
  board.ccu.first_boot();
  auto fw = mfr.firmware_bundle(to_bytes(sbl), to_bytes(cce), crypto::sha256(as_bytes("icu")));
  auto r = hardened ? board.ccu.measured_boot_hardened(fw) : board.ccu.measured_boot(fw);
  py::dict d;
  d["cik"] = from_bytes(r.cik_public_key);
  d["pik"] = from_bytes(r.pik_public_key);
  d["ak"] = from_bytes(r.ak_public_key);
  d["pik_endorsement"] = r.pik_endorsement.has_value();
  return d;
}

}  // namespace

PYBIND11_MODULE(_itx, m) {
  m.doc() = "ITX confidential-computing simulator";

  static py::exception<Error> itx_error(m, "ItxError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = py::handle(itx_error.ptr())(py::str(e.what()));
      exc.attr("code") = to_string(e.code());
      PyErr_SetObject(itx_error.ptr(), exc.ptr());
    }
  });

  m.attr("KEY_CONTEXTS") = kKeyContexts;
  m.attr("MAX_KEY_REGIONS") = kMaxKeyRegions;
  m.attr("MAX_FRAME_SIZE") = kMaxFrameSize;
  m.attr("FRAME_GRANULE") = kFrameGranule;

  py::enum_<StreamType>(m, "StreamType")
      .value("Code", StreamType::Code)
      .value("Data", StreamType::Data)
      .value("Checkpoint", StreamType::Checkpoint)
      .value("Output", StreamType::Output);

  py::class_<StreamIV>(m, "StreamIV")
      .def(py::init<>())
      .def_readwrite("type", &StreamIV::type)
      .def_readwrite("stream_id", &StreamIV::stream_id)
      .def_readwrite("ipu_id", &StreamIV::ipu_id)
      .def_readwrite("tile_id", &StreamIV::tile_id)
      .def_readwrite("epoch", &StreamIV::epoch)
      .def_readwrite("checkpoint_id", &StreamIV::checkpoint_id)
      .def_readwrite("frame_index", &StreamIV::frame_index)
      .def_static("code", &StreamIV::code)
      .def_static("data", &StreamIV::data)
      .def_static("output", &StreamIV::output)
      .def_static("checkpoint", &StreamIV::checkpoint)
      .def("serialize", [](const StreamIV& iv) { return from_bytes(iv.serialize()); })
      .def_static("parse", [](const py::bytes& b) { return StreamIV::parse(to_bytes(b)); })
      .def("__eq__", [](const StreamIV& a, const StreamIV& b) { return a == b; });

  m.def("compose_iv", &compose_iv);
  m.def("check_frame_size", &check_frame_size);
  m.def("encrypt_frame", [](const py::bytes& key, const StreamIV& iv, const py::bytes& payload) {
    return from_bytes(encrypt_frame(to_array<32>(key, "key"), iv, to_bytes(payload)).serialize());
  });
  m.def("decrypt_frame", [](const py::bytes& key, const py::bytes& frame) {
    auto [iv, pt] = decrypt_frame(to_array<32>(key, "key"), Frame::parse(to_bytes(frame)));
    return py::make_tuple(iv, from_bytes(pt));
  });
  m.def(
      "encrypt_stream",
      [](const py::bytes& key, const StreamIV& tmpl, const py::bytes& data, std::uint32_t frame_size) {
        const Bytes d = to_bytes(data);
        StreamFile f;
        f.tmpl = tmpl;
        f.frame_total_size = frame_size;
        f.plaintext_length = d.size();
        f.frames = encrypt_stream(to_array<32>(key, "key"), tmpl, d, frame_size);
        return from_bytes(f.serialize());
      },
      py::arg("key"), py::arg("template"), py::arg("data"), py::arg("frame_size") = kDefaultFrameSize);
  m.def("decrypt_stream", [](const py::bytes& key, const py::bytes& file) {
    auto f = StreamFile::parse(to_bytes(file));
    return from_bytes(decrypt_stream(to_array<32>(key, "key"), f.tmpl, f.frames, f.plaintext_length));
  });
  m.def("sha256", [](const py::bytes& b) { return from_bytes(crypto::sha256(to_bytes(b))); });

  m.def("toy_job_json", [] { return toy_job().to_json(); });
  m.def("default_device_json", [] { return DeviceConfig{}.to_json(); });
  m.def(
      "compile",
      [](const std::string& job_json, std::optional<std::string> device_json) {
        auto cfg = device_json ? DeviceConfig::from_json(*device_json) : DeviceConfig{};
        auto job = compile(JobDescription::from_json(job_json), cfg, 0);
        py::dict d;
        d["manifest_measurement"] = from_bytes(job.manifest.measurement());
        py::list labels;
        for (const auto& sp : job.manifest.sync_points) labels.append(sp.label);
        d["sync_points"] = labels;
        d["party_tiles"] = job.party_tiles;
        d["manifest"] = from_bytes(job.manifest.encode());
        return d;
      },
      py::arg("job_json"), py::arg("device_json") = py::none());

  m.def("dice_boot", &dice_boot, py::arg("seed"), py::arg("sbl"), py::arg("cce"), py::arg("hardened") = false,
        "Boot one seeded device with the given images and return its public keys.");

  py::class_<PyScenario>(m, "Scenario")
      .def(py::init<std::uint64_t, bool, std::optional<std::string>, std::optional<std::string>>(),
           py::arg("seed") = 1, py::arg("hardened") = false, py::arg("job_json") = py::none(),
           py::arg("device_json") = py::none())
      .def("run_trusted", &PyScenario::run_trusted, py::arg("kill_after") = py::none(),
           py::arg("adversary") = py::none(), py::arg("checkpoint") = py::none())
      .def("run_normal", &PyScenario::run_normal)
      .def("model", &PyScenario::model, "Model bytes of the last run as recovered by the first receiver.")
      .def("reference_model", [](PyScenario& s) { return from_bytes(s.get().reference_model()); })
      .def("new_sessions", [](PyScenario& s, bool keep) { s.get().new_sessions(keep); }, py::arg("keep_prior_nonce"))
      .def("verify_last", &PyScenario::verify_last, py::arg("epoch") = 0, py::arg("checkpoint_id") = 0,
           py::arg("with_tcb") = true)
      .def("update_secondary_bootloader", &PyScenario::update_sbl, py::arg("image"), py::arg("issue_tcb") = true)
      .def("random_schedule", &PyScenario::random_schedule)
      .def("event_log", [](const PyScenario& s) { return s.log().text(); })
      .def("key_release_ordered", [](const PyScenario& s) { return key_release_ordered(s.log()); });
}

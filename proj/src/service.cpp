#include "wavegen/service.hpp"

#include <httplib.h>

#include <random>

#include "wavegen/checkpoint.hpp"

namespace wavegen {

namespace {

const char* kB64 = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

void set_cors(httplib::Response& res) {
  res.set_header("Access-Control-Allow-Origin", "*");
  res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
  res.set_header("Access-Control-Allow-Headers", "Content-Type");
}

void fail(httplib::Response& res, int status, const std::string& msg) {
  set_cors(res);
  res.status = status;
  nlohmann::ordered_json j;
  j["error"] = msg;
  res.set_content(j.dump(), "application/json");
}

/// Parsed and validated latent vectors for one generate request.
struct LatentChoice {
  std::vector<std::vector<float>> zs;
};

LatentChoice resolve_latents(const nlohmann::json& body, long latent_dim) {
  const bool has_z = body.contains("z") && !body["z"].is_null();
  const bool has_seed = body.contains("seed") && !body["seed"].is_null();
  if (has_z && has_seed)
    throw std::invalid_argument("z and seed are mutually exclusive");
  long count = 1;
  if (body.contains("count") && !body["count"].is_null()) {
    if (!body["count"].is_number_integer() || body["count"].get<long>() < 1)
      throw std::invalid_argument("count must be a positive integer");
    count = body["count"].get<long>();
  }
  LatentChoice out;
  if (has_z) {
    if (!body["z"].is_array()) throw std::invalid_argument("z must be an array of reals");
    auto z = body["z"].get<std::vector<float>>();
    if ((long)z.size() != latent_dim)
      throw std::out_of_range("z must have length " + std::to_string(latent_dim));
    for (float v : z)
      if (v < -1.0f || v > 1.0f) throw std::invalid_argument("z values must lie in [-1,1]");
    out.zs.assign((size_t)count, z);
  } else {
    const uint64_t seed = has_seed ? body["seed"].get<uint64_t>()
                                   : (uint64_t)std::random_device{}();
    out.zs = latent_vectors(count, latent_dim, seed);
  }
  return out;
}

nlohmann::ordered_json sample_json(const std::vector<float>& z, const Waveform& w) {
  nlohmann::ordered_json j;
  j["z"] = z;
  j["wav_base64"] = base64_encode(encode_wav(w));
  return j;
}

}  // namespace

std::string base64_encode(const std::vector<uint8_t>& bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  size_t i = 0;
  for (; i + 3 <= bytes.size(); i += 3) {
    uint32_t v = ((uint32_t)bytes[i] << 16) | ((uint32_t)bytes[i + 1] << 8) | bytes[i + 2];
    out += kB64[(v >> 18) & 63];
    out += kB64[(v >> 12) & 63];
    out += kB64[(v >> 6) & 63];
    out += kB64[v & 63];
  }
  const size_t rem = bytes.size() - i;
  if (rem == 1) {
    uint32_t v = (uint32_t)bytes[i] << 16;
    out += kB64[(v >> 18) & 63];
    out += kB64[(v >> 12) & 63];
    out += "==";
  } else if (rem == 2) {
    uint32_t v = ((uint32_t)bytes[i] << 16) | ((uint32_t)bytes[i + 1] << 8);
    out += kB64[(v >> 18) & 63];
    out += kB64[(v >> 12) & 63];
    out += kB64[(v >> 6) & 63];
    out += '=';
  }
  return out;
}

void setup_service_routes(httplib::Server& srv, const LoadedGenerator& lg) {
  srv.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
    set_cors(res);
    res.status = 204;
  });

  srv.Get("/api/model", [&lg](const httplib::Request&, httplib::Response& res) {
    set_cors(res);
    const ModelSpec& s = lg.g.spec;
    nlohmann::ordered_json j;
    j["arch"] = s.kind == ModelKind::WaveganG ? "wavegan" : "specgan";
    j["d"] = s.d;
    j["c"] = s.c;
    j["latent_dim"] = s.latent_dim;
    j["sample_rate"] = lg.sample_rate;
    j["ckpt_iteration"] = lg.iteration;
    res.set_content(j.dump(), "application/json");
  });

  srv.Post("/api/generate", [&lg](const httplib::Request& req, httplib::Response& res) {
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(req.body.empty() ? "{}" : req.body);
      if (!body.is_object()) throw std::invalid_argument("body must be a JSON object");
    } catch (const std::exception& e) {
      return fail(res, 400, std::string("malformed JSON: ") + e.what());
    }
    LatentChoice latents;
    try {
      latents = resolve_latents(body, lg.g.spec.latent_dim);
    } catch (const std::out_of_range& e) {
      return fail(res, 422, e.what());
    } catch (const std::exception& e) {
      return fail(res, 400, e.what());
    }
    try {
      auto ws = generate(lg, latents.zs);
      set_cors(res);
      if (ws.size() == 1) {
        auto bytes = encode_wav(ws[0]);
        res.set_header("X-Latent-Z", nlohmann::json(latents.zs[0]).dump());
        res.set_content(std::string(bytes.begin(), bytes.end()), "audio/wav");
      } else {
        nlohmann::ordered_json arr = nlohmann::ordered_json::array();
        for (size_t i = 0; i < ws.size(); ++i)
          arr.push_back(sample_json(latents.zs[i], ws[i]));
        res.set_content(arr.dump(), "application/json");
      }
    } catch (const std::exception& e) {
      fail(res, 500, std::string("generation failed: ") + e.what());
    }
  });

  srv.Post("/api/interpolate", [&lg](const httplib::Request& req, httplib::Response& res) {
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(req.body.empty() ? "{}" : req.body);
      if (!body.is_object() || !body.contains("z_a") || !body.contains("z_b") ||
          !body["z_a"].is_array() || !body["z_b"].is_array())
        throw std::invalid_argument("body must contain z_a, z_b arrays and steps");
    } catch (const std::exception& e) {
      return fail(res, 400, std::string("malformed JSON: ") + e.what());
    }
    long steps = 2;
    if (body.contains("steps")) {
      if (!body["steps"].is_number_integer() || body["steps"].get<long>() < 2)
        return fail(res, 400, "steps must be an integer >= 2");
      steps = body["steps"].get<long>();
    }
    auto za = body["z_a"].get<std::vector<float>>();
    auto zb = body["z_b"].get<std::vector<float>>();
    const long dim = lg.g.spec.latent_dim;
    if ((long)za.size() != dim || (long)zb.size() != dim)
      return fail(res, 422, "z_a and z_b must have length " + std::to_string(dim));

    std::vector<std::vector<float>> zs;
    for (long s = 0; s < steps; ++s) {
      const float t = (float)s / (float)(steps - 1);
      std::vector<float> z((size_t)dim);
      for (long i = 0; i < dim; ++i)
        z[(size_t)i] = (1.0f - t) * za[(size_t)i] + t * zb[(size_t)i];
      zs.push_back(std::move(z));
    }
    try {
      auto ws = generate(lg, zs);
      set_cors(res);
      nlohmann::ordered_json arr = nlohmann::ordered_json::array();
      for (size_t i = 0; i < ws.size(); ++i) arr.push_back(sample_json(zs[i], ws[i]));
      res.set_content(arr.dump(), "application/json");
    } catch (const std::exception& e) {
      fail(res, 500, std::string("generation failed: ") + e.what());
    }
  });
}

void serve(const std::string& ckpt_path, int port) {
  LoadedGenerator lg = load_generator(load_checkpoint(ckpt_path));
  httplib::Server srv;
  setup_service_routes(srv, lg);
  if (!srv.listen("0.0.0.0", port))
    throw std::runtime_error("failed to listen on port " + std::to_string(port));
}

}  // namespace wavegen

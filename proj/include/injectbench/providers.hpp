#pragma once

// Contracts for every external model the pipeline consumes, plus the
// deterministic fixture implementations used for offline runs and tests.
// HTTP implementations live in http_providers.hpp.

#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "injectbench/core.hpp"
#include "injectbench/digest.hpp"
#include "injectbench/image.hpp"

namespace injectbench {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Errors and configuration
// ---------------------------------------------------------------------------

enum class ProviderErrorKind { transport_error, auth_error, rate_limited, parse_failure, refusal };
INJECTBENCH_ENUM_NAMES(ProviderErrorKind, 5, {ProviderErrorKind::transport_error, "transport_error"},
                       {ProviderErrorKind::auth_error, "auth_error"},
                       {ProviderErrorKind::rate_limited, "rate_limited"},
                       {ProviderErrorKind::parse_failure, "parse_failure"},
                       {ProviderErrorKind::refusal, "refusal"});

class ProviderError : public std::runtime_error {
 public:
  ProviderError(ProviderErrorKind kind, const std::string& what, bool retryable = false)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what),
        kind_(kind),
        retryable_(retryable) {}

  ProviderErrorKind kind() const { return kind_; }
  bool retryable() const { return retryable_; }
  int attempts() const { return attempts_; }
  void set_attempts(int n) { attempts_ = n; }

 private:
  ProviderErrorKind kind_;
  bool retryable_;
  int attempts_ = 1;
};

struct ProviderConfig {
  std::string endpoint_url;
  std::string api_key;
  std::string model_name;
  double timeout_seconds = 60.0;
  int max_retries = 2;
  double temperature = 0.0;
  int max_new_tokens = 1024;
  // 0 means unlimited.
  int max_in_flight = 0;

  void validate(const std::string& role) const {
    if (max_retries < 0) throw std::invalid_argument(role + ": max_retries must be >= 0");
    if (!(timeout_seconds > 0)) throw std::invalid_argument(role + ": timeout must be > 0");
    if (max_new_tokens <= 0) throw std::invalid_argument(role + ": max_new_tokens must be > 0");
    if (max_in_flight < 0) throw std::invalid_argument(role + ": max_in_flight must be >= 0");
  }

  friend bool operator==(const ProviderConfig&, const ProviderConfig&) = default;
};

inline void to_json(json& j, const ProviderConfig& c) {
  // The api key never leaves the process through serialization.
  j = json{{"endpoint_url", c.endpoint_url},   {"model_name", c.model_name},
           {"timeout", c.timeout_seconds},      {"max_retries", c.max_retries},
           {"temperature", c.temperature},      {"max_new_tokens", c.max_new_tokens},
           {"max_in_flight", c.max_in_flight}};
}

inline void from_json(const json& j, ProviderConfig& c) {
  c.endpoint_url = j.value("endpoint_url", "");
  c.api_key = j.value("api_key", "");
  c.model_name = j.value("model_name", "");
  c.timeout_seconds = j.value("timeout", 60.0);
  c.max_retries = j.value("max_retries", 2);
  c.temperature = j.value("temperature", 0.0);
  c.max_new_tokens = j.value("max_new_tokens", 1024);
  c.max_in_flight = j.value("max_in_flight", 0);
}

// ---------------------------------------------------------------------------
// Retry with exponential backoff
// ---------------------------------------------------------------------------

struct RetryPolicy {
  int max_retries = 2;
  double base_seconds = 1.0;
  double factor = 2.0;
  double jitter = 0.2;
  std::uint64_t jitter_seed = 42;
  // Injected so tests never sleep.
  std::function<void(double)> sleep = [](double s) {
    std::this_thread::sleep_for(std::chrono::duration<double>(s));
  };

  double delay_for(int retry_index, Rng& rng) const {
    const double nominal = base_seconds * std::pow(factor, retry_index);
    return nominal * (1.0 + jitter * (2.0 * rng.uniform01() - 1.0));
  }
};

/// Runs `fn` up to max_retries + 1 times, retrying only retryable
/// ProviderErrors (transport failures and rate limits). The final error
/// carries the attempt count.
template <typename Fn>
auto with_retries(const RetryPolicy& policy, Fn&& fn) -> decltype(fn()) {
  Rng rng(policy.jitter_seed);
  for (int attempt = 0;; ++attempt) {
    try {
      return fn();
    } catch (ProviderError& e) {
      e.set_attempts(attempt + 1);
      if (!e.retryable() || attempt >= policy.max_retries) throw;
      policy.sleep(policy.delay_for(attempt, rng));
    }
  }
}

/// Caps concurrent requests against one provider.
class InFlightLimiter {
 public:
  explicit InFlightLimiter(int max_in_flight) : max_(max_in_flight) {}

  class Slot {
   public:
    explicit Slot(InFlightLimiter* owner) : owner_(owner) {}
    Slot(const Slot&) = delete;
    Slot& operator=(const Slot&) = delete;
    ~Slot() {
      if (owner_) owner_->release();
    }

   private:
    InFlightLimiter* owner_;
  };

  Slot acquire() {
    if (max_ <= 0) return Slot(nullptr);
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return in_flight_ < max_; });
    ++in_flight_;
    return Slot(this);
  }

 private:
  void release() {
    {
      std::lock_guard lock(mu_);
      --in_flight_;
    }
    cv_.notify_one();
  }

  int max_;
  int in_flight_ = 0;
  std::mutex mu_;
  std::condition_variable cv_;
};

// ---------------------------------------------------------------------------
// Structured output parsing
// ---------------------------------------------------------------------------

/// Extracts a JSON object/array from model text: the whole text, a fenced
/// ```json block, or the outermost {...} span. nullopt means parse failure.
inline std::optional<json> parse_structured(const std::string& text) {
  auto try_parse = [](std::string_view s) -> std::optional<json> {
    json j = json::parse(s, nullptr, false);
    if (j.is_discarded() || !(j.is_object() || j.is_array())) return std::nullopt;
    return j;
  };
  if (auto j = try_parse(text)) return j;
  if (auto fence = text.find("```"); fence != std::string::npos) {
    auto start = text.find('\n', fence);
    auto end = start == std::string::npos ? std::string::npos : text.find("```", start);
    if (end != std::string::npos) {
      if (auto j = try_parse(std::string_view(text).substr(start + 1, end - start - 1))) return j;
    }
  }
  const auto open = text.find('{');
  const auto close = text.rfind('}');
  if (open != std::string::npos && close != std::string::npos && close > open) {
    if (auto j = try_parse(std::string_view(text).substr(open, close - open + 1))) return j;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Chat / vision
// ---------------------------------------------------------------------------

struct ImageAttachment {
  std::string bytes;  // encoded PNG or PPM
  std::string mime;

  static ImageAttachment from_image(const Image& img) {
    ImageAttachment a;
    a.bytes = encode_png(img);
    a.mime = "image/png";
    return a;
  }
  /// PPM inputs are re-encoded as PNG so every attachment is web-safe.
  static ImageAttachment from_file(const std::string& path) {
    ImageAttachment a;
    a.bytes = read_file(path);
    if (!looks_like_png(a.bytes)) a.bytes = encode_png(decode_image(a.bytes));
    a.mime = "image/png";
    return a;
  }
};

struct ChatVisionRequest {
  std::string system_prompt;
  std::string user_prompt;
  std::vector<ImageAttachment> images;
  // Describes the JSON the caller expects back; forwarded as a response-format hint.
  json output_schema = json::object();
  // Structured side-channel for fixture providers; never sent over the wire.
  json context = json::object();

  /// Content digest over everything a live model would see.
  std::string digest() const {
    std::string buf = system_prompt;
    buf += '\x1f';
    buf += user_prompt;
    for (const auto& im : images) {
      buf += '\x1f';
      buf += sha256_hex(im.bytes);
    }
    buf += '\x1f';
    buf += output_schema.dump();
    return sha256_hex(buf);
  }
};

struct ChatVisionResponse {
  std::string raw_text;
  std::optional<json> parsed;
  bool parse_ok = false;
  int attempts = 1;

  static ChatVisionResponse from_text(std::string text, int attempts = 1) {
    ChatVisionResponse r;
    r.raw_text = std::move(text);
    r.parsed = parse_structured(r.raw_text);
    r.parse_ok = r.parsed.has_value();
    r.attempts = attempts;
    return r;
  }
};

class ChatProvider {
 public:
  virtual ~ChatProvider() = default;
  /// Returns the model response (possibly with parse_ok = false). Throws
  /// ProviderError for transport/auth/rate-limit failures after retries.
  virtual ChatVisionResponse chat(const ChatVisionRequest& request) = 0;
};

// ---------------------------------------------------------------------------
// OCR
// ---------------------------------------------------------------------------

struct OcrWord {
  std::string text;
  BBox bbox;  // crop coordinates
  double confidence = 0.0;
};

using OcrResult = std::vector<OcrWord>;

struct OcrRequest {
  Image crop;
  // Where the crop sits in the source screenshot.
  BBox crop_origin;
  json context = json::object();
};

class OcrProvider {
 public:
  virtual ~OcrProvider() = default;
  virtual OcrResult ocr(const OcrRequest& request) = 0;
};

/// Checks the OCR contract: boxes inside the crop, confidences in [0,1].
inline void validate_ocr_result(const OcrResult& result, int crop_w, int crop_h) {
  for (const auto& w : result) {
    if (!w.bbox.valid_within(crop_w, crop_h))
      throw ProviderError(ProviderErrorKind::parse_failure, "OCR box outside crop");
    if (!(w.confidence >= 0.0 && w.confidence <= 1.0))
      throw ProviderError(ProviderErrorKind::parse_failure, "OCR confidence outside [0,1]");
  }
}

// ---------------------------------------------------------------------------
// Image edit
// ---------------------------------------------------------------------------

enum class RenderMode { text_region, media_region };
INJECTBENCH_ENUM_NAMES(RenderMode, 2, {RenderMode::text_region, "text_region"},
                       {RenderMode::media_region, "media_region"});

struct ImageEditRequest {
  Image source;
  BBox target;
  std::string payload_text;
  RenderMode mode = RenderMode::text_region;
  // Moderator feedback from a previous hard_fail, empty on first render.
  std::string feedback;
  // Fully rendered prompt for live models.
  std::string instruction;
  json context = json::object();
};

struct ImageEditResponse {
  std::optional<Image> image;
  bool refused = false;
  std::string refusal_reason;
  bool overflow_hint = false;
};

class ImageEditProvider {
 public:
  virtual ~ImageEditProvider() = default;
  /// Refusals are returned (refused = true); transport failures throw.
  virtual ImageEditResponse edit(const ImageEditRequest& request) = 0;
};

// ---------------------------------------------------------------------------
// Embeddings
// ---------------------------------------------------------------------------

struct EmbeddingInput {
  std::string text;
  std::optional<ImageAttachment> image;

  std::string digest() const { return image ? sha256_hex("img:" + image->bytes) : sha256_hex("txt:" + text); }
};

using EmbeddingResult = std::vector<double>;

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::vector<EmbeddingResult> embed(const std::vector<EmbeddingInput>& inputs) = 0;
};

// ---------------------------------------------------------------------------
// Fixtures
// ---------------------------------------------------------------------------

/// Chat fixture. Resolution order: a scripted response queue, a response
/// registered for the request digest, then a responder function. Responders
/// may throw ProviderError to simulate outages.
class FixtureChat : public ChatProvider {
 public:
  using Responder = std::function<std::string(const ChatVisionRequest&)>;

  FixtureChat() = default;
  explicit FixtureChat(Responder responder) : responder_(std::move(responder)) {}

  void register_response(const std::string& digest, std::string text) {
    std::lock_guard lock(mu_);
    by_digest_[digest] = std::move(text);
  }
  void push_script(std::vector<std::string> texts) {
    std::lock_guard lock(mu_);
    for (auto& t : texts) script_.push_back(std::move(t));
  }
  void set_responder(Responder r) {
    std::lock_guard lock(mu_);
    responder_ = std::move(r);
  }
  int calls() const { return calls_.load(); }

  ChatVisionResponse chat(const ChatVisionRequest& request) override {
    ++calls_;
    Responder responder;
    {
      std::lock_guard lock(mu_);
      if (!script_.empty()) {
        std::string t = std::move(script_.front());
        script_.pop_front();
        return ChatVisionResponse::from_text(std::move(t));
      }
      if (auto it = by_digest_.find(request.digest()); it != by_digest_.end())
        return ChatVisionResponse::from_text(it->second);
      responder = responder_;
    }
    if (!responder) throw ProviderError(ProviderErrorKind::transport_error, "no fixture registered");
    return ChatVisionResponse::from_text(responder(request));
  }

 private:
  mutable std::mutex mu_;
  std::map<std::string, std::string> by_digest_;
  std::deque<std::string> script_;
  Responder responder_;
  std::atomic<int> calls_{0};
};

/// OCR fixture returning registered word boxes (source coordinates, keyed by
/// screenshot id from the request context) that intersect the crop, clipped
/// and translated into crop coordinates.
class FixtureOcr : public OcrProvider {
 public:
  using Responder = std::function<OcrResult(const OcrRequest&)>;

  FixtureOcr() = default;
  explicit FixtureOcr(Responder responder) : responder_(std::move(responder)) {}

  void register_words(const std::string& screenshot_id, std::vector<OcrWord> source_words) {
    std::lock_guard lock(mu_);
    words_[screenshot_id] = std::move(source_words);
  }
  int calls() const { return calls_.load(); }

  OcrResult ocr(const OcrRequest& request) override {
    ++calls_;
    if (request.crop.empty()) throw std::invalid_argument("ocr: empty crop");
    if (responder_) return responder_(request);
    const std::string id = request.context.value("screenshot_id", "");
    std::vector<OcrWord> source;
    {
      std::lock_guard lock(mu_);
      if (auto it = words_.find(id); it != words_.end()) source = it->second;
    }
    OcrResult out;
    const BBox& o = request.crop_origin;
    for (const auto& w : source) {
      if (!w.bbox.intersects(o)) continue;
      BBox local{w.bbox.x - o.x, w.bbox.y - o.y, w.bbox.w, w.bbox.h};
      local = clip_to(local, request.crop.width(), request.crop.height());
      if (local.area() == 0) continue;
      out.push_back({w.text, local, w.confidence});
    }
    return out;
  }

 private:
  std::mutex mu_;
  std::map<std::string, std::vector<OcrWord>> words_;
  Responder responder_;
  std::atomic<int> calls_{0};
};

/// Image-edit fixture: rasterises the payload onto the 8x16 glyph grid inside
/// the target box. Text regions get the box's top-left colour as background;
/// media regions get a caption band along the bottom of the box.
class FixtureImageEdit : public ImageEditProvider {
 public:
  /// The next `n` calls return a refusal.
  void refuse_next(int n) { refusals_ += n; }
  /// The next `n` calls return an image with the wrong dimensions.
  void corrupt_next(int n) { corrupt_ += n; }
  int calls() const { return calls_.load(); }

  ImageEditResponse edit(const ImageEditRequest& request) override {
    ++calls_;
    if (!request.target.valid_within(request.source.width(), request.source.height()))
      throw std::invalid_argument("image_edit: target box outside image");
    ImageEditResponse resp;
    if (refusals_ > 0) {
      --refusals_;
      resp.refused = true;
      resp.refusal_reason = "fixture refusal";
      return resp;
    }
    if (corrupt_ > 0) {
      --corrupt_;
      resp.image = Image(request.source.width() + 1, request.source.height());
      return resp;
    }
    Image out = request.source;
    BBox box = request.target;
    if (request.mode == RenderMode::media_region) {
      const int band = std::min(box.h, kGlyphHeight * 2);
      box = {box.x, box.bottom() - band, box.w, band};
    }
    const Rgb bg = request.source.at(box.x, box.y);
    const int lum = (bg.r * 299 + bg.g * 587 + bg.b * 114) / 1000;
    const Rgb fg = lum > 128 ? Rgb{20, 20, 20} : Rgb{240, 240, 240};
    resp.overflow_hint = draw_text(out, box, request.payload_text, fg, bg);
    resp.image = std::move(out);
    return resp;
  }

 private:
  std::atomic<int> refusals_{0};
  std::atomic<int> corrupt_{0};
  std::atomic<int> calls_{0};
};

/// Pseudo-random unit vectors keyed by content digest.
class FixtureEmbedding : public EmbeddingProvider {
 public:
  explicit FixtureEmbedding(std::size_t dimension = 64) : dimension_(dimension) {
    if (dimension == 0) throw std::invalid_argument("embedding dimension must be positive");
  }

  std::size_t dimension() const { return dimension_; }

  std::vector<EmbeddingResult> embed(const std::vector<EmbeddingInput>& inputs) override {
    if (inputs.empty()) throw std::invalid_argument("embed: empty input");
    std::vector<EmbeddingResult> out;
    out.reserve(inputs.size());
    for (const auto& in : inputs) out.push_back(vector_for(in.digest()));
    return out;
  }

  EmbeddingResult vector_for(const std::string& digest) const {
    std::uint64_t state = digest64(digest);
    EmbeddingResult v(dimension_);
    double n2 = 0.0;
    for (auto& x : v) {
      x = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-52 - 1.0;
      n2 += x * x;
    }
    const double n = std::sqrt(n2);
    for (auto& x : v) x /= n;
    return v;
  }

 private:
  std::size_t dimension_;
};

// ---------------------------------------------------------------------------
// Role bundle
// ---------------------------------------------------------------------------

/// One provider per pipeline role plus the evaluated agents. Members a
/// command does not need may stay null.
struct ProviderSet {
  std::unique_ptr<ChatProvider> localizer_vlm;
  std::unique_ptr<ChatProvider> bbox_moderator;
  std::unique_ptr<ChatProvider> goal_vlm;
  std::unique_ptr<ChatProvider> payload_llm;
  std::unique_ptr<ChatProvider> pq_reviewer;
  std::unique_ptr<ImageEditProvider> render;
  std::unique_ptr<ChatProvider> curator;
  std::unique_ptr<OcrProvider> ocr;
  std::unique_ptr<EmbeddingProvider> embedding;
  std::unique_ptr<ChatProvider> defense_classifier;
  std::unique_ptr<ChatProvider> judge;
  std::map<std::string, std::unique_ptr<ChatProvider>> agents;
};

template <typename T>
T& require_provider(const std::unique_ptr<T>& p, const char* role) {
  if (!p) throw std::invalid_argument(std::string("no provider configured for ") + role);
  return *p;
}

}  // namespace injectbench

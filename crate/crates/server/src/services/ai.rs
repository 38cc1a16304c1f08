use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::response::Response;
use axum::routing::{get, post};
use axum::{Json, Router};
use ehr_core::ai::{
    ChatReply, ConversationLog, ConversationSummary, ImageFormatTag, MedicalReport, ReviewVerdict, SummaryResult,
    XrayLabel, XrayResult,
};
use ehr_core::ids::{ConversationId, PatientId, ReportId, VisitId, XrayResultId};
use ehr_core::Error;
use serde::Deserialize;

use super::created;
use crate::app::AppState;
use crate::error::ApiError;
use crate::extract::{ApiJson, Principal};

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Deserialize)]
struct InitiateBody {
    user_input: String,
}

async fn chat_initiate(
    State(s): State<AppState>,
    Principal(c): Principal,
    ApiJson(body): ApiJson<InitiateBody>,
) -> ApiResult<ChatReply> {
    Ok(Json(s.run(move |p| p.ai.chat_initiate(&c, &body.user_input)).await?))
}

#[derive(Deserialize)]
struct ContinueBody {
    conversation_id: ConversationId,
    user_input: String,
}

async fn chat_continue(
    State(s): State<AppState>,
    Principal(c): Principal,
    ApiJson(body): ApiJson<ContinueBody>,
) -> ApiResult<ChatReply> {
    let id = body.conversation_id.clone();
    let bot_reply = s
        .run(move |p| p.ai.chat_continue(&c, &body.conversation_id, &body.user_input))
        .await?;
    Ok(Json(ChatReply {
        conversation_id: id,
        bot_reply,
    }))
}

async fn chats(State(s): State<AppState>, Principal(c): Principal) -> ApiResult<Vec<ConversationSummary>> {
    Ok(Json(s.platform.ai.list_conversations(&c)?))
}

async fn chat(
    State(s): State<AppState>,
    Principal(c): Principal,
    Path(id): Path<String>,
) -> ApiResult<ConversationLog> {
    Ok(Json(
        s.platform.ai.get_conversation(&c, &ConversationId::from(id.as_str()))?,
    ))
}

async fn summarize(
    State(s): State<AppState>,
    Principal(c): Principal,
    Path(p): Path<String>,
) -> ApiResult<SummaryResult> {
    let patient = PatientId::from(p.as_str());
    Ok(Json(s.run(move |pl| pl.summarize(&c, &patient)).await?))
}

async fn report(
    State(s): State<AppState>,
    Principal(c): Principal,
    Path((p, v)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let (patient, visit) = (PatientId::from(p.as_str()), VisitId::from(v.as_str()));
    Ok(created(
        s.run(move |pl| pl.generate_report(&c, &patient, &visit)).await?,
    ))
}

async fn get_report(
    State(s): State<AppState>,
    Principal(c): Principal,
    Path(id): Path<String>,
) -> ApiResult<MedicalReport> {
    Ok(Json(s.platform.report(&c, &ReportId::from(id.as_str()))?))
}

fn format_from_name(name: &str) -> Option<ImageFormatTag> {
    let ext = name.rsplit_once('.')?.1.to_ascii_lowercase();
    match ext.as_str() {
        "png" => Some(ImageFormatTag::Png),
        "jpg" | "jpeg" => Some(ImageFormatTag::Jpeg),
        "dcm" | "pix" => Some(ImageFormatTag::DicomPixelData),
        _ => None,
    }
}

fn parse_format(s: &str) -> Result<ImageFormatTag, Error> {
    serde_json::from_value(serde_json::Value::String(s.trim().to_owned()))
        .map_err(|_| Error::field("format", "expected png, jpeg or dicom_pixel_data"))
}

async fn classify(
    State(s): State<AppState>,
    Principal(c): Principal,
    Path(p): Path<String>,
    mut form: Multipart,
) -> Result<Response, ApiError> {
    let bad = |e: axum::extract::multipart::MultipartError| Error::field("image", e.body_text());
    let (mut image, mut file_name, mut format) = (None, None, None);
    while let Some(field) = form.next_field().await.map_err(bad)? {
        match field.name() {
            Some("image") => {
                file_name = field.file_name().map(str::to_owned);
                image = Some(field.bytes().await.map_err(bad)?);
            }
            Some("format") => format = Some(parse_format(&field.text().await.map_err(bad)?)?),
            _ => {}
        }
    }
    let image = image.ok_or_else(|| Error::field("image", "missing image part"))?;
    let format = format
        .or_else(|| file_name.as_deref().and_then(format_from_name))
        .ok_or_else(|| Error::field("format", "cannot infer the image format"))?;
    let patient = PatientId::from(p.as_str());
    let result = s
        .run(move |pl| pl.classify_xray(&c, &patient, &image, format, file_name.as_deref()))
        .await?;
    Ok(created(result))
}

#[derive(Deserialize)]
struct ReviewBody {
    verdict: ReviewVerdict,
    final_label: Option<XrayLabel>,
}

async fn review(
    State(s): State<AppState>,
    Principal(c): Principal,
    Path(id): Path<String>,
    ApiJson(body): ApiJson<ReviewBody>,
) -> ApiResult<XrayResult> {
    let id = XrayResultId::from(id.as_str());
    Ok(Json(
        s.run(move |p| p.review_xray(&c, &id, body.verdict, body.final_label))
            .await?,
    ))
}

async fn xray_history(
    State(s): State<AppState>,
    Principal(c): Principal,
    Path(p): Path<String>,
) -> ApiResult<Vec<XrayResult>> {
    Ok(Json(s.platform.xray_history(&c, &PatientId::from(p.as_str()))?))
}

pub fn router(state: AppState, max_upload: usize) -> Router {
    Router::new()
        .route("/chat/initiate", post(chat_initiate))
        .route("/chat/initiate/", post(chat_initiate))
        .route("/chat/continue", post(chat_continue))
        .route("/chat/continue/", post(chat_continue))
        .route("/chats", get(chats))
        .route("/chats/", get(chats))
        .route("/chat/{id}", get(chat))
        .route("/api/ai/summarize/{patient}", post(summarize))
        .route("/api/ai/report/{patient}/{visit}", post(report))
        .route("/api/ai/reports/{id}", get(get_report))
        .route("/api/ai/xray/{id}", post(classify).get(xray_history))
        .route("/api/ai/xray/{id}/review", post(review))
        .layer(DefaultBodyLimit::max(max_upload))
        .with_state(state)
}

//! Users, hospitals, emergency contacts, and the admission lifecycle that
//! gates doctor access to patient records.
//!
//! All tables live behind one lock, so every mutation (including the
//! admission uniqueness check for a patient/doctor pair) is serialized and
//! foreign keys are checked in the same critical section as the insert.

mod model;

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, RwLock};

pub use model::*;

use crate::clock::Clock;
use crate::identity::{Permission, PrincipalClaims, PrincipalDirectory, Role};
use crate::ids::*;
use crate::{Error, Result};

#[derive(Default)]
struct Tables {
    patients: HashMap<PatientId, PatientProfile>,
    national_ids: HashMap<String, PatientId>,
    doctors: HashMap<DoctorId, DoctorProfile>,
    admins: HashMap<AdminId, AdminProfile>,
    hospitals: Vec<Hospital>,
    contacts: HashMap<ContactId, EmergencyContact>,
    // many-to-many patient <-> contact
    patient_contacts: BTreeSet<(PatientId, ContactId)>,
    // insertion order doubles as a tie-breaker for equal timestamps
    admissions: Vec<Admission>,
    data_requests: Vec<DataAdditionRequest>,
    exam_requests: Vec<ExaminationRequest>,
    events: Vec<SystemEvent>,
}

impl Tables {
    fn log(&mut self, ids: &IdGen, actor: &str, kind: EventKind, detail: String, at: i64) {
        self.events.push(SystemEvent {
            event_id: EventId(ids.next("evt")),
            actor_id: actor.to_owned(),
            event_kind: kind,
            detail,
            at,
        });
    }

    fn admission_mut(&mut self, id: &AdmissionId) -> Option<&mut Admission> {
        self.admissions.iter_mut().find(|a| &a.admission_id == id)
    }
}

pub struct Directory {
    tables: RwLock<Tables>,
    ids: IdGen,
    clock: Arc<dyn Clock>,
}

/// National IDs are exactly 14 ASCII digits.
pub fn validate_national_id(id: &str) -> Result<()> {
    if id.len() == 14 && id.bytes().all(|b| b.is_ascii_digit()) {
        Ok(())
    } else {
        Err(Error::field("national_id", "must be exactly 14 digits"))
    }
}

fn require_nonempty(path: &str, value: &str) -> Result<()> {
    if value.trim().is_empty() {
        Err(Error::field(path, "must not be empty"))
    } else {
        Ok(())
    }
}

impl Directory {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        Self {
            tables: RwLock::default(),
            ids: IdGen::new(),
            clock,
        }
    }

    /// Checks a permission and records refused attempts as access events.
    fn require(&self, claims: &PrincipalClaims, permission: Permission, what: &str) -> Result<()> {
        if claims.has_permission(permission) {
            return Ok(());
        }
        self.record_refusal(claims, what);
        Err(Error::insufficient_permissions())
    }

    fn record_refusal(&self, claims: &PrincipalClaims, what: &str) {
        let now = self.clock.now();
        let mut t = self.tables.write().unwrap();
        t.log(
            &self.ids,
            &claims.subject,
            EventKind::AccessAttempt,
            format!("refused: {what}"),
            now,
        );
    }

    // ----- registration -------------------------------------------------

    /// Registers a patient. `caller` is `None` for self-registration, or an
    /// admin holding `registerPatient` for desk registration.
    pub fn register_patient(&self, caller: Option<&PrincipalClaims>, profile: NewPatient) -> Result<PatientId> {
        if let Some(c) = caller {
            self.require(c, Permission::RegisterPatient, "register patient")?;
        }
        validate_national_id(&profile.national_id)?;
        require_nonempty("name", &profile.name)?;

        let now = self.clock.now();
        let mut t = self.tables.write().unwrap();
        if t.national_ids.contains_key(&profile.national_id) {
            return Err(Error::Conflict("national_id already registered".into()));
        }
        let id = PatientId(self.ids.next("pat"));
        t.national_ids.insert(profile.national_id.clone(), id.clone());
        t.patients.insert(
            id.clone(),
            PatientProfile {
                patient_id: id.clone(),
                national_id: profile.national_id,
                name: profile.name,
                contact: profile.contact,
                registered_at: now,
            },
        );
        let actor = caller.map_or_else(|| id.to_string(), |c| c.subject.clone());
        t.log(&self.ids, &actor, EventKind::Registration, format!("patient {id}"), now);
        Ok(id)
    }

    pub fn register_doctor(&self, caller: &PrincipalClaims, profile: NewDoctor) -> Result<DoctorId> {
        self.require(caller, Permission::RegisterDoctor, "register doctor")?;
        self.insert_doctor(&caller.subject, profile)
    }

    fn insert_doctor(&self, actor: &str, profile: NewDoctor) -> Result<DoctorId> {
        require_nonempty("name", &profile.name)?;
        let now = self.clock.now();
        let mut t = self.tables.write().unwrap();
        if let Some(h) = profile
            .hospital_ids
            .iter()
            .find(|h| !t.hospitals.iter().any(|x| &x.hospital_id == *h))
        {
            return Err(Error::NotFound(format!("hospital {h}")));
        }
        let id = DoctorId(self.ids.next("doc"));
        t.doctors.insert(
            id.clone(),
            DoctorProfile {
                doctor_id: id.clone(),
                name: profile.name,
                specialty: profile.specialty,
                hospital_ids: profile.hospital_ids,
            },
        );
        t.log(&self.ids, actor, EventKind::Registration, format!("doctor {id}"), now);
        Ok(id)
    }

    /// Bootstrap path used when seeding a deployment; not reachable over HTTP.
    pub fn seed_admin(&self, name: &str) -> AdminId {
        let now = self.clock.now();
        let mut t = self.tables.write().unwrap();
        let id = AdminId(self.ids.next("adm"));
        t.admins.insert(
            id.clone(),
            AdminProfile {
                admin_id: id.clone(),
                name: name.to_owned(),
            },
        );
        t.log(&self.ids, "system", EventKind::Registration, format!("admin {id}"), now);
        id
    }

    pub fn seed_doctor(&self, profile: NewDoctor) -> Result<DoctorId> {
        self.insert_doctor("system", profile)
    }

    pub fn seed_hospital(&self, name: &str, region: &str) -> HospitalId {
        let mut t = self.tables.write().unwrap();
        let id = HospitalId(self.ids.next("hos"));
        t.hospitals.push(Hospital {
            hospital_id: id.clone(),
            name: name.to_owned(),
            region: region.to_owned(),
        });
        id
    }

    // ----- lookups ------------------------------------------------------

    pub fn patient(&self, id: &PatientId) -> Option<PatientProfile> {
        self.tables.read().unwrap().patients.get(id).cloned()
    }

    pub fn doctor(&self, id: &DoctorId) -> Option<DoctorProfile> {
        self.tables.read().unwrap().doctors.get(id).cloned()
    }

    pub fn patient_exists(&self, id: &PatientId) -> bool {
        self.tables.read().unwrap().patients.contains_key(id)
    }

    pub fn profile(&self, claims: &PrincipalClaims) -> Result<UserProfile> {
        let t = self.tables.read().unwrap();
        let sub = claims.subject.as_str();
        let found = match claims.primary_role() {
            Some(Role::Patient) => t.patients.get(&PatientId::from(sub)).cloned().map(UserProfile::Patient),
            Some(Role::Doctor) => t.doctors.get(&DoctorId::from(sub)).cloned().map(UserProfile::Doctor),
            Some(Role::Admin) => t.admins.get(&AdminId::from(sub)).cloned().map(UserProfile::Admin),
            Some(Role::Service) => Some(UserProfile::Service {
                client_id: sub.to_owned(),
            }),
            None => None,
        };
        found.ok_or_else(|| Error::NotFound(format!("profile for {sub}")))
    }

    /// Whether `doctor` currently holds an active admission for `patient`.
    pub fn has_active_admission(&self, doctor: &DoctorId, patient: &PatientId) -> bool {
        self.tables
            .read()
            .unwrap()
            .admissions
            .iter()
            .any(|a| a.is_active() && &a.doctor_id == doctor && &a.patient_id == patient)
    }

    /// Whether some admission for the pair was active at instant `t`.
    pub fn was_admitted_at(&self, doctor: &DoctorId, patient: &PatientId, t: i64) -> bool {
        self.tables
            .read()
            .unwrap()
            .admissions
            .iter()
            .any(|a| &a.doctor_id == doctor && &a.patient_id == patient && a.active_at(t))
    }

    pub fn admission(&self, id: &AdmissionId) -> Option<Admission> {
        self.tables
            .read()
            .unwrap()
            .admissions
            .iter()
            .find(|a| &a.admission_id == id)
            .cloned()
    }

    /// Snapshot of the append-only event stream.
    pub fn events(&self) -> Vec<SystemEvent> {
        self.tables.read().unwrap().events.clone()
    }

    // ----- admissions ---------------------------------------------------

    pub fn admit(&self, claims: &PrincipalClaims, patient: &PatientId, doctor: &DoctorId) -> Result<Admission> {
        self.require(claims, Permission::AdmitPatient, "admit")?;
        let now = self.clock.now();
        let mut t = self.tables.write().unwrap();
        self.admit_locked(&mut t, &claims.subject, patient, doctor, now)
    }

    fn admit_locked(
        &self,
        t: &mut Tables,
        admin: &str,
        patient: &PatientId,
        doctor: &DoctorId,
        now: i64,
    ) -> Result<Admission> {
        if !t.patients.contains_key(patient) {
            return Err(Error::NotFound(format!("patient {patient}")));
        }
        if !t.doctors.contains_key(doctor) {
            return Err(Error::NotFound(format!("doctor {doctor}")));
        }
        if t.admissions
            .iter()
            .any(|a| a.is_active() && &a.patient_id == patient && &a.doctor_id == doctor)
        {
            return Err(Error::Conflict(format!(
                "an active admission already links {patient} and {doctor}"
            )));
        }
        let admission = Admission {
            admission_id: AdmissionId(self.ids.next("admn")),
            patient_id: patient.clone(),
            doctor_id: doctor.clone(),
            admitted_by: AdminId::from(admin),
            state: AdmissionState::Active,
            admitted_at: now,
            discharged_at: None,
        };
        t.admissions.push(admission.clone());
        t.log(
            &self.ids,
            admin,
            EventKind::Assignment,
            format!("{} admitted {patient} to {doctor}", admission.admission_id),
            now,
        );
        Ok(admission)
    }

    pub fn discharge(&self, claims: &PrincipalClaims, admission_id: &AdmissionId) -> Result<Admission> {
        self.require(claims, Permission::DischargePatient, "discharge")?;
        let now = self.clock.now();
        let mut t = self.tables.write().unwrap();
        let admission = t
            .admission_mut(admission_id)
            .ok_or_else(|| Error::NotFound(format!("admission {admission_id}")))?;
        if !admission.is_active() {
            return Err(Error::Conflict(format!("admission {admission_id} already discharged")));
        }
        admission.state = AdmissionState::Discharged;
        admission.discharged_at = Some(now);
        let admission = admission.clone();
        for req in t
            .exam_requests
            .iter_mut()
            .filter(|r| r.resulting_admission.as_ref() == Some(admission_id))
        {
            req.state = ExaminationState::Closed;
        }
        t.log(
            &self.ids,
            &claims.subject,
            EventKind::Discharge,
            format!("{admission_id} discharged"),
            now,
        );
        Ok(admission)
    }

    /// Admissions visible to the caller, newest first. Admins see everything;
    /// doctors and patients only their own.
    pub fn list_admissions(&self, claims: &PrincipalClaims, filter: &AdmissionFilter) -> Result<Vec<Admission>> {
        let sub = claims.subject.as_str();
        let visible: Box<dyn Fn(&Admission) -> bool> = match claims.primary_role() {
            Some(Role::Admin) if claims.has_permission(Permission::AdmitPatient) => Box::new(|_| true),
            Some(Role::Doctor) => {
                if matches!(filter, AdmissionFilter::ByDoctor(d) if d.as_str() != sub) {
                    self.record_refusal(claims, "list another doctor's admissions");
                    return Err(Error::Forbidden("doctors may only list their own admissions".into()));
                }
                Box::new(move |a: &Admission| a.doctor_id.as_str() == sub)
            }
            Some(Role::Patient) => {
                let foreign = match filter {
                    AdmissionFilter::ByDoctor(_) => true,
                    AdmissionFilter::ByPatient(p) => p.as_str() != sub,
                    AdmissionFilter::All => false,
                };
                if foreign {
                    self.record_refusal(claims, "list admissions outside own record");
                    return Err(Error::Forbidden("patients may only list their own admissions".into()));
                }
                Box::new(move |a: &Admission| a.patient_id.as_str() == sub)
            }
            _ => return Err(Error::insufficient_permissions()),
        };
        let t = self.tables.read().unwrap();
        let mut out: Vec<(usize, Admission)> = t
            .admissions
            .iter()
            .enumerate()
            .filter(|(_, a)| visible(a))
            .filter(|(_, a)| match filter {
                AdmissionFilter::All => true,
                AdmissionFilter::ByDoctor(d) => &a.doctor_id == d,
                AdmissionFilter::ByPatient(p) => &a.patient_id == p,
            })
            .map(|(i, a)| (i, a.clone()))
            .collect();
        out.sort_by(|(ia, a), (ib, b)| b.admitted_at.cmp(&a.admitted_at).then(ib.cmp(ia)));
        Ok(out.into_iter().map(|(_, a)| a).collect())
    }

    // ----- data-addition requests ---------------------------------------

    pub fn submit_data_addition_request(
        &self,
        claims: &PrincipalClaims,
        request: NewDataAdditionRequest,
    ) -> Result<DataAdditionRequest> {
        self.require(claims, Permission::RequestDataAddition, "submit data addition")?;
        require_nonempty("document_ref", &request.document_ref)?;
        let patient = PatientId::from(claims.subject.as_str());
        let now = self.clock.now();
        let mut t = self.tables.write().unwrap();
        if !t.patients.contains_key(&patient) {
            return Err(Error::NotFound(format!("patient {patient}")));
        }
        let req = DataAdditionRequest {
            request_id: RequestId(self.ids.next("dreq")),
            patient_id: patient,
            data_type: request.data_type,
            issuance_date: request.issuance_date,
            document_ref: request.document_ref,
            description: request.description,
            state: RequestState::Submitted,
            reviewing_doctor: None,
            submitted_at: now,
        };
        t.data_requests.push(req.clone());
        Ok(req)
    }

    pub fn forward_request(
        &self,
        claims: &PrincipalClaims,
        request_id: &RequestId,
        doctor: &DoctorId,
    ) -> Result<DataAdditionRequest> {
        self.require(claims, Permission::AdmitPatient, "forward data addition")?;
        let mut t = self.tables.write().unwrap();
        if !t.doctors.contains_key(doctor) {
            return Err(Error::NotFound(format!("doctor {doctor}")));
        }
        let req = t
            .data_requests
            .iter_mut()
            .find(|r| &r.request_id == request_id)
            .ok_or_else(|| Error::NotFound(format!("request {request_id}")))?;
        if req.state != RequestState::Submitted {
            return Err(Error::Conflict(format!(
                "request is {:?}, expected submitted",
                req.state
            )));
        }
        req.state = RequestState::Forwarded;
        req.reviewing_doctor = Some(doctor.clone());
        Ok(req.clone())
    }

    /// Resolves a forwarded request. Only the doctor it was forwarded to may
    /// resolve it. Applying an approval to the record is the caller's job.
    pub fn resolve_request(
        &self,
        claims: &PrincipalClaims,
        request_id: &RequestId,
        verdict: Verdict,
    ) -> Result<DataAdditionRequest> {
        let mut t = self.tables.write().unwrap();
        let req = t
            .data_requests
            .iter_mut()
            .find(|r| &r.request_id == request_id)
            .ok_or_else(|| Error::NotFound(format!("request {request_id}")))?;
        let is_reviewer = claims.has_role(Role::Doctor)
            && req.reviewing_doctor.as_ref().map(DoctorId::as_str) == Some(claims.subject.as_str());
        if !is_reviewer {
            drop(t);
            self.record_refusal(claims, "resolve a request not forwarded to caller");
            return Err(Error::Forbidden("request was not forwarded to this doctor".into()));
        }
        if req.state != RequestState::Forwarded {
            return Err(Error::Conflict(format!(
                "request is {:?}, expected forwarded",
                req.state
            )));
        }
        req.state = match verdict {
            Verdict::Approved => RequestState::Approved,
            Verdict::Rejected => RequestState::Rejected,
        };
        Ok(req.clone())
    }

    pub fn data_request(&self, id: &RequestId) -> Option<DataAdditionRequest> {
        let t = self.tables.read().unwrap();
        t.data_requests.iter().find(|r| &r.request_id == id).cloned()
    }

    pub fn list_data_addition_requests(&self, claims: &PrincipalClaims) -> Result<Vec<DataAdditionRequest>> {
        let t = self.tables.read().unwrap();
        let sub = claims.subject.as_str();
        let keep = |r: &&DataAdditionRequest| match claims.primary_role() {
            Some(Role::Admin) => claims.has_permission(Permission::AdmitPatient),
            Some(Role::Doctor) => r.reviewing_doctor.as_ref().map(DoctorId::as_str) == Some(sub),
            Some(Role::Patient) => r.patient_id.as_str() == sub,
            _ => false,
        };
        if claims.primary_role() == Some(Role::Service) {
            return Err(Error::insufficient_permissions());
        }
        Ok(t.data_requests.iter().filter(keep).cloned().collect())
    }

    // ----- examination requests -----------------------------------------

    pub fn request_examination(&self, claims: &PrincipalClaims, requested_type: &str) -> Result<ExaminationRequest> {
        self.require(claims, Permission::RequestExamination, "request examination")?;
        require_nonempty("requested_type", requested_type)?;
        let patient = PatientId::from(claims.subject.as_str());
        let now = self.clock.now();
        let mut t = self.tables.write().unwrap();
        if !t.patients.contains_key(&patient) {
            return Err(Error::NotFound(format!("patient {patient}")));
        }
        let req = ExaminationRequest {
            request_id: RequestId(self.ids.next("xreq")),
            patient_id: patient,
            requested_type: requested_type.trim().to_owned(),
            state: ExaminationState::Pending,
            resulting_admission: None,
            requested_at: now,
        };
        t.exam_requests.push(req.clone());
        Ok(req)
    }

    pub fn list_examination_requests(&self, claims: &PrincipalClaims) -> Result<Vec<ExaminationRequest>> {
        let t = self.tables.read().unwrap();
        match claims.primary_role() {
            Some(Role::Admin) if claims.has_permission(Permission::AdmitPatient) => Ok(t.exam_requests.clone()),
            Some(Role::Patient) => Ok(t
                .exam_requests
                .iter()
                .filter(|r| r.patient_id.as_str() == claims.subject)
                .cloned()
                .collect()),
            _ => Err(Error::insufficient_permissions()),
        }
    }

    /// Creates the admission for a pending examination request and marks the
    /// request scheduled, atomically. Discharging that admission closes it.
    pub fn schedule_examination(
        &self,
        claims: &PrincipalClaims,
        request_id: &RequestId,
        doctor: &DoctorId,
    ) -> Result<(ExaminationRequest, Admission)> {
        self.require(claims, Permission::AdmitPatient, "schedule examination")?;
        let now = self.clock.now();
        let mut t = self.tables.write().unwrap();
        let idx = t
            .exam_requests
            .iter()
            .position(|r| &r.request_id == request_id)
            .ok_or_else(|| Error::NotFound(format!("request {request_id}")))?;
        if t.exam_requests[idx].state != ExaminationState::Pending {
            return Err(Error::Conflict("examination request is not pending".into()));
        }
        let patient = t.exam_requests[idx].patient_id.clone();
        let admission = self.admit_locked(&mut t, &claims.subject, &patient, doctor, now)?;
        let req = &mut t.exam_requests[idx];
        req.state = ExaminationState::Scheduled;
        req.resulting_admission = Some(admission.admission_id.clone());
        Ok((req.clone(), admission))
    }

    // ----- hospitals and contacts ---------------------------------------

    /// Any authenticated principal may list hospitals.
    pub fn list_hospitals(&self, _claims: &PrincipalClaims) -> Vec<Hospital> {
        self.tables.read().unwrap().hospitals.clone()
    }

    /// Links an emergency contact to the calling patient. Contacts are
    /// deduplicated by (name, phone) and the link has set semantics, so
    /// repeating the call returns the same id.
    pub fn assign_emergency_contact(&self, claims: &PrincipalClaims, contact: NewContact) -> Result<ContactId> {
        if claims.primary_role() != Some(Role::Patient) {
            return Err(Error::Forbidden("only patients assign their emergency contacts".into()));
        }
        require_nonempty("name", &contact.name)?;
        require_nonempty("phone", &contact.phone)?;
        let patient = PatientId::from(claims.subject.as_str());
        let mut t = self.tables.write().unwrap();
        if !t.patients.contains_key(&patient) {
            return Err(Error::NotFound(format!("patient {patient}")));
        }
        let existing = t
            .contacts
            .values()
            .find(|c| c.name == contact.name && c.phone == contact.phone)
            .map(|c| c.contact_id.clone());
        let id = match existing {
            Some(id) => id,
            None => {
                let id = ContactId(self.ids.next("con"));
                t.contacts.insert(
                    id.clone(),
                    EmergencyContact {
                        contact_id: id.clone(),
                        name: contact.name,
                        phone: contact.phone,
                    },
                );
                id
            }
        };
        t.patient_contacts.insert((patient, id.clone()));
        Ok(id)
    }

    pub fn emergency_contacts(&self, patient: &PatientId) -> Vec<EmergencyContact> {
        let t = self.tables.read().unwrap();
        t.patient_contacts
            .iter()
            .filter(|(p, _)| p == patient)
            .filter_map(|(_, c)| t.contacts.get(c).cloned())
            .collect()
    }
}

impl PrincipalDirectory for Directory {
    fn role_of(&self, principal_id: &str) -> Option<Role> {
        let t = self.tables.read().unwrap();
        if t.patients.contains_key(&PatientId::from(principal_id)) {
            Some(Role::Patient)
        } else if t.doctors.contains_key(&DoctorId::from(principal_id)) {
            Some(Role::Doctor)
        } else if t.admins.contains_key(&AdminId::from(principal_id)) {
            Some(Role::Admin)
        } else {
            None
        }
    }
}

"""Sepsis risk prediction with uncertainty and lab test recommendation."""

import json

from ._sepsislab import (
    SepsisLabError,
    Service,
    binary_entropy,
    compute_auc,
    decide,
    evaluate,
    generate,
    risk_color,
    train,
)

__all__ = [
    "SepsisLabError",
    "Service",
    "ApiError",
    "Client",
    "binary_entropy",
    "compute_auc",
    "decide",
    "evaluate",
    "generate",
    "risk_color",
    "train",
]


class ApiError(Exception):
    """Non-2xx API reply; carries the status and the error body."""

    def __init__(self, status, body):
        super().__init__(f"{status} {body.get('code')}: {body.get('message')}")
        self.status = status
        self.code = body.get("code")
        self.body = body


class Client:
    """In-process API client over a Service; raises ApiError on failures."""

    def __init__(self, config, data_dir=None):
        self.service = Service(str(config), None if data_dir is None else str(data_dir))

    def _call(self, method, path, body=None, query=None):
        payload = None if body is None else json.dumps(body)
        status, reply = self.service.request(method, path, payload, query or {})
        if status >= 400:
            raise ApiError(status, reply)
        return reply

    def patients(self):
        return self._call("GET", "/api/patients")

    def patient(self, patient_id):
        return self._call("GET", f"/api/patients/{patient_id}")

    def trajectory(self, patient_id, hypothetical=()):
        query = {"hypothetical": ",".join(hypothetical)} if hypothetical else None
        return self._call("GET", f"/api/patients/{patient_id}/trajectory", query=query)

    def recommendations(self, patient_id, top=5):
        return self._call("GET", f"/api/patients/{patient_id}/recommendations", query={"top": str(top)})

    def observe(self, patient_id, variable, value, time=None):
        body = {"variable": variable, "value": value}
        if time is not None:
            body["time"] = time
        return self._call("POST", f"/api/patients/{patient_id}/observations", body)

    def order(self, patient_id, variables):
        return self._call("POST", "/api/orders", {"patient_id": patient_id, "variables": list(variables)})

    def fulfill(self, order_id, values, time=None):
        body = {"values": dict(values)}
        if time is not None:
            body["time"] = time
        return self._call("POST", f"/api/orders/{order_id}/fulfill", body)

import logging

import pytest

from app_config import ConfigKeys, get_bool, get_float, get_int, get_list, get_path, get_str, init_config, reload_config
from lib.logs import setup_logging


def test_typed_getters(app_settings):
    assert get_int(ConfigKeys.NET_MAX_PDU) == 16384
    assert get_float(ConfigKeys.NET_IDLE_TIMEOUT_S) == 5.0
    assert get_str(ConfigKeys.LOG_LEVEL) == "DEBUG"
    assert get_int(ConfigKeys.GATEWAY_ADMIN_PORT, 11180) == 0


def test_defaults_for_missing_keys(app_settings):
    assert get_float(ConfigKeys.NET_CONNECT_TIMEOUT_S, 10.0) == 10.0
    assert get_bool("gateway.strict", True) is True
    assert get_str(ConfigKeys.GATEWAY_CONFIG) == ""


def test_list_from_comma_string(app_settings):
    assert get_list("gateway.destinations") == ["pacs", "viewer"]
    assert get_list("gateway.missing", ["pacs"]) == ["pacs"]


def test_paths_resolve_against_config_file(app_settings):
    assert get_path(ConfigKeys.DIR_AUDIT) == app_settings.parent / "work" / "audit"


def test_uninitialized_access(fresh_config):
    with pytest.raises(RuntimeError):
        get_str(ConfigKeys.UID_ROOT)


def test_missing_file(fresh_config, tmp_path):
    with pytest.raises(FileNotFoundError):
        init_config(tmp_path / "absent.yaml")


def test_reload_picks_up_changes(app_settings):
    app_settings.write_text(app_settings.read_text().replace("max_pdu: 16384", "max_pdu: 32768"))
    reload_config()
    assert get_int(ConfigKeys.NET_MAX_PDU) == 32768


def test_bad_number(app_settings):
    with pytest.raises(ValueError):
        get_int(ConfigKeys.LOG_LEVEL)


def test_logging_settings_follow_reload(app_settings):
    text = app_settings.read_text()
    app_settings.write_text(
        text.replace('level: "DEBUG"\n', 'level: "INFO"\n  rich_tracebacks: "off"\n  quiet: "lib.net.scp, lib.hl7.mllp"\n')
    )
    reload_config()
    setup_logging()
    try:
        assert logging.getLogger().level == logging.INFO
        assert logging.getLogger().handlers[0].rich_tracebacks is False
        assert logging.getLogger("lib.net.scp").level == logging.WARNING
        assert logging.getLogger("lib.hl7.mllp").level == logging.WARNING
    finally:
        setup_logging(verbose=True)
    assert logging.getLogger("lib.net.scp").level == logging.NOTSET

import logging

import httpx

from app.settings import settings

logger = logging.getLogger(__name__)


def notify(text: str) -> bool:
    if not settings.telegram_bot_token or not settings.telegram_chat_id:
        return False
    url = f"https://api.telegram.org/bot{settings.telegram_bot_token}/sendMessage"
    try:
        resp = httpx.post(url, json={"chat_id": settings.telegram_chat_id, "text": text}, timeout=15)
        resp.raise_for_status()
    except httpx.HTTPError as e:
        logger.warning("telegram notification failed: %s", e)
        return False
    return True
